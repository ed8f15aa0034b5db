//! Causal-variable substitutions, their inverses, and the reordering forms in
//! both representations.
//!
//! Broad band: `eta_pm = j_e / hbar pm eta^(-+)`, inverse `eta = eta_+ - eta_-`,
//! `j_e = hbar (eta_+^(+) + eta_-^(-))`. The same maps serve `(zeta, a_e)`.
//!
//! Narrow band: `mu_+ = d_e / hbar`, `mu_- = mu + d_e / hbar`,
//! `mu-bar_+ = mu-bar + d-bar_e / hbar`, `mu-bar_- = d-bar_e / hbar`, likewise
//! for `nu`, and `E_+ = e'`, `E_- = hbar nu' + e'`, `E-bar_+ = hbar nu-bar' + e-bar'`,
//! `E-bar_- = e-bar'`. In the plain phase space every barred variable is the
//! conjugate of its partner.

use num_complex::Complex64 as C64;

use crate::error::{LabError, Result};
use crate::freq::{negative_part, positive_part};
use crate::grid::{apply_kernel_left, contract_kernel, contract_scalar, Signal, StationaryKernel};
use crate::kernels::{Band, KernelFamily};
use crate::report::Report;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Largest deviation tolerated between a barred variable and the conjugate of
/// its partner in the plain phase space.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseSpace {
    /// Barred variables are conjugates of their partners.
    Plain,
    /// Barred variables are independent.
    Duplicated,
}

fn real(c: f64) -> C64 {
    C64::new(c, 0.0)
}

/// `(eta_+, eta_-)` from `(eta, j_e)`.
pub fn broad_substitute(eta: &Signal, j_e: &Signal, hbar: f64) -> Result<(Signal, Signal)> {
    eta.check_compatible(j_e)?;
    let base = j_e.scale(real(1.0 / hbar));
    Ok((base.add(&negative_part(eta)), base.sub(&positive_part(eta))))
}

/// `(eta, j_e)` from `(eta_+, eta_-)`.
pub fn broad_invert(eta_plus: &Signal, eta_minus: &Signal, hbar: f64) -> Result<(Signal, Signal)> {
    eta_plus.check_compatible(eta_minus)?;
    let eta = eta_plus.sub(eta_minus);
    let j = positive_part(eta_plus).add(&negative_part(eta_minus)).scale(real(hbar));
    Ok((eta, j))
}

/// Causal arguments of the narrow-band functionals. Barred members are
/// carried explicitly so that the duplicated phase space can be represented.
#[derive(Clone, Debug, PartialEq)]
pub struct NarrowCausal {
    pub mu: Signal,
    pub mu_bar: Signal,
    pub d_e: Signal,
    pub d_bar: Signal,
    pub nu: Signal,
    pub nu_bar: Signal,
    pub e_e: Signal,
    pub e_bar: Signal,
    /// Primed auxiliary pair entering the field arguments `E_pm`.
    pub nu_p: Signal,
    pub nu_p_bar: Signal,
    pub e_p: Signal,
    pub e_p_bar: Signal,
}

impl NarrowCausal {
    /// Plain phase space: barred members are the conjugates.
    pub fn plain(mu: Signal, d_e: Signal, nu: Signal, e_e: Signal, nu_p: Signal, e_p: Signal) -> Self {
        Self {
            mu_bar: mu.conj(),
            d_bar: d_e.conj(),
            nu_bar: nu.conj(),
            e_bar: e_e.conj(),
            nu_p_bar: nu_p.conj(),
            e_p_bar: e_p.conj(),
            mu,
            d_e,
            nu,
            e_e,
            nu_p,
            e_p,
        }
    }

    fn pairs(&self) -> [(&'static str, &Signal, &Signal); 6] {
        [
            ("mu", &self.mu, &self.mu_bar),
            ("d_e", &self.d_e, &self.d_bar),
            ("nu", &self.nu, &self.nu_bar),
            ("e_e", &self.e_e, &self.e_bar),
            ("nu'", &self.nu_p, &self.nu_p_bar),
            ("e'", &self.e_p, &self.e_p_bar),
        ]
    }

    /// Largest violation of the conjugation constraints.
    pub fn constraint_defect(&self) -> (String, f64) {
        worst(self.pairs().iter().map(|(n, a, b)| (*n, a.conj().max_abs_diff(b))))
    }
}

/// Skeleton (time-loop) arguments of the narrow-band functionals.
#[derive(Clone, Debug, PartialEq)]
pub struct NarrowSkeleton {
    pub mu_plus: Signal,
    pub mu_bar_plus: Signal,
    pub mu_minus: Signal,
    pub mu_bar_minus: Signal,
    pub nu_plus: Signal,
    pub nu_bar_plus: Signal,
    pub nu_minus: Signal,
    pub nu_bar_minus: Signal,
    pub field_plus: Signal,
    pub field_bar_plus: Signal,
    pub field_minus: Signal,
    pub field_bar_minus: Signal,
}

impl NarrowSkeleton {
    /// Largest violation of `bar-x_pm = x_-+^*`.
    pub fn constraint_defect(&self) -> (String, f64) {
        worst(
            [
                ("mu-bar_+", &self.mu_bar_plus, &self.mu_minus),
                ("mu-bar_-", &self.mu_bar_minus, &self.mu_plus),
                ("nu-bar_+", &self.nu_bar_plus, &self.nu_minus),
                ("nu-bar_-", &self.nu_bar_minus, &self.nu_plus),
                ("E-bar_+", &self.field_bar_plus, &self.field_minus),
                ("E-bar_-", &self.field_bar_minus, &self.field_plus),
            ]
            .iter()
            .map(|(n, bar, other)| (*n, other.conj().max_abs_diff(bar))),
        )
    }
}

fn worst<'a>(it: impl Iterator<Item = (&'a str, f64)>) -> (String, f64) {
    it.fold((String::new(), 0.0f64), |acc, (n, d)| if d > acc.1 { (n.to_string(), d) } else { acc })
}

fn check_plain(what: &str, defect: (String, f64)) -> Result<()> {
    if defect.1 > CONSTRAINT_TOLERANCE {
        return Err(LabError::Constraint(format!("{what}: {} is not the conjugate of its partner", defect.0), defect.1));
    }
    Ok(())
}

pub fn narrow_substitute(c: &NarrowCausal, hbar: f64, phase: PhaseSpace) -> Result<NarrowSkeleton> {
    for (_, a, b) in c.pairs() {
        c.mu.check_compatible(a)?;
        c.mu.check_compatible(b)?;
    }
    if phase == PhaseSpace::Plain {
        check_plain("causal arguments", c.constraint_defect())?;
    }
    let s = real(1.0 / hbar);
    let out = NarrowSkeleton {
        mu_plus: c.d_e.scale(s),
        mu_bar_plus: c.mu_bar.add(&c.d_bar.scale(s)),
        mu_minus: c.mu.add(&c.d_e.scale(s)),
        mu_bar_minus: c.d_bar.scale(s),
        nu_plus: c.e_e.scale(s),
        nu_bar_plus: c.nu_bar.add(&c.e_bar.scale(s)),
        nu_minus: c.nu.add(&c.e_e.scale(s)),
        nu_bar_minus: c.e_bar.scale(s),
        field_plus: c.e_p.clone(),
        field_bar_plus: c.nu_p_bar.scale(real(hbar)).add(&c.e_p_bar),
        field_minus: c.nu_p.scale(real(hbar)).add(&c.e_p),
        field_bar_minus: c.e_p_bar.clone(),
    };
    Ok(out)
}

/// Inverse of [`narrow_substitute`]. The skeleton members that the
/// substitution ties together (`mu_+` with `mu-bar_-`, and so on) must agree;
/// in the plain phase space the conjugation constraints are checked too.
pub fn narrow_invert(s: &NarrowSkeleton, hbar: f64, phase: PhaseSpace) -> Result<NarrowCausal> {
    if phase == PhaseSpace::Plain {
        check_plain("skeleton arguments", s.constraint_defect())?;
    }
    let h = real(hbar);
    let d_e = s.mu_plus.scale(h);
    let d_bar = s.mu_bar_minus.scale(h);
    let e_e = s.nu_plus.scale(h);
    let e_bar = s.nu_bar_minus.scale(h);
    let e_p = s.field_plus.clone();
    let e_p_bar = s.field_bar_minus.clone();
    let inv = real(1.0 / hbar);
    Ok(NarrowCausal {
        mu: s.mu_minus.sub(&s.mu_plus),
        mu_bar: s.mu_bar_plus.sub(&s.mu_bar_minus),
        nu: s.nu_minus.sub(&s.nu_plus),
        nu_bar: s.nu_bar_plus.sub(&s.nu_bar_minus),
        nu_p: s.field_minus.sub(&s.field_plus).scale(inv),
        nu_p_bar: s.field_bar_plus.sub(&s.field_bar_minus).scale(inv),
        d_e,
        d_bar,
        e_e,
        e_bar,
        e_p,
        e_p_bar,
    })
}

/// Broad reordering form
/// `-(i hbar/2) f_+ D_F f_+ + (i hbar/2) f_- D_F^* f_- - i hbar f_- D^(+) f_+`.
pub fn broad_reordering_form(family: &KernelFamily, hbar: f64, f_plus: &Signal, f_minus: &Signal) -> Result<C64> {
    let ff = contract_kernel(f_plus, &family.feynman, f_plus)?;
    let fm = contract_kernel(f_minus, &family.feynman.conj(), f_minus)?;
    let mixed = contract_kernel(f_minus, &family.plus, f_plus)?;
    Ok(I * hbar * (-0.5 * ff + 0.5 * fm - mixed))
}

/// Narrow reordering form
/// `-i hbar fbar_+ G_F f_+ + i hbar f_- G_F^* fbar_- - i hbar fbar_- G^(+) f_+`.
///
/// The barred slots pair with the annihilation-type field `E`, the unbarred
/// ones with `E^dag`.
pub fn narrow_reordering_form(
    family: &KernelFamily,
    hbar: f64,
    fbar_plus: &Signal,
    f_plus: &Signal,
    fbar_minus: &Signal,
    f_minus: &Signal,
) -> Result<C64> {
    let pp = contract_kernel(fbar_plus, &family.feynman, f_plus)?;
    let mm = contract_kernel(f_minus, &family.feynman.conj(), fbar_minus)?;
    let mixed = contract_kernel(fbar_minus, &family.plus, f_plus)?;
    Ok(I * hbar * (-pp + mm - mixed))
}

/// Broad causal form `-i g D_R h`.
pub fn broad_causal_form(family: &KernelFamily, g: &Signal, h: &Signal) -> Result<C64> {
    Ok(-I * contract_kernel(g, &family.retarded, h)?)
}

/// Narrow causal form `-i g_e G_R h_nubar + i g_ebar G_R^* h_nu`.
pub fn narrow_causal_form(family: &KernelFamily, g_e: &Signal, h_nu_bar: &Signal, g_e_bar: &Signal, h_nu: &Signal) -> Result<C64> {
    let a = contract_kernel(g_e, &family.retarded, h_nu_bar)?;
    let b = contract_kernel(g_e_bar, &family.retarded.conj(), h_nu)?;
    Ok(-I * a + I * b)
}

/// Derivative arguments of the broad reordering form after the change of
/// variables `A_pm = a' pm hbar zeta'^(-+)`: given the symbols `g` (for
/// `d/da'`) and `h` (for `d/dzeta'`), returns `(d/dA_+, d/dA_-)`.
pub fn broad_derivative_images(g: &Signal, h: &Signal, hbar: f64) -> (Signal, Signal) {
    let hs = h.scale(real(1.0 / hbar));
    (negative_part(g).add(&hs), positive_part(g).sub(&hs))
}

/// Narrow analogue: given symbols for `d/de'`, `d/de-bar'`, `d/dnu'`,
/// `d/dnu-bar'`, returns `(d/dE_+, d/dE-bar_+, d/dE_-, d/dE-bar_-)`.
pub fn narrow_derivative_images(
    g_e: &Signal,
    g_e_bar: &Signal,
    h_nu: &Signal,
    h_nu_bar: &Signal,
    hbar: f64,
) -> (Signal, Signal, Signal, Signal) {
    let s = real(1.0 / hbar);
    let hn = h_nu.scale(s);
    let hnb = h_nu_bar.scale(s);
    (g_e.sub(&hn), hnb.clone(), hn, g_e_bar.sub(&hnb))
}

/// Checks that the reordering form, evaluated on the images of the causal
/// derivative symbols, equals the retarded causal form, for every pair of
/// test signals in `battery`.
pub fn transform_reordering_form(family: &KernelFamily, hbar: f64, battery: &[(Signal, Signal)]) -> Result<Report> {
    let mut rep = Report::new();
    let mut dev = 0.0f64;
    match family.band {
        Band::Broad => {
            for (g, h) in battery {
                let (fp, fm) = broad_derivative_images(g, h, hbar);
                let lhs = broad_reordering_form(family, hbar, &fp, &fm)?;
                let rhs = broad_causal_form(family, g, h)?;
                dev = dev.max((lhs - rhs).norm());
            }
            rep.push("broad reordering form in causal variables", dev, 1e-10);
        }
        Band::Narrow => {
            // Each battery pair supplies (g_e, h_nu_bar); the conjugate slots
            // use the conjugated signals, which is the plain phase space.
            for (g, h) in battery {
                let (g_bar, h_nu) = (g.conj(), h.conj());
                let (fbp, fp, fbm, fm) = narrow_derivative_images(g, &g_bar, &h_nu, h, hbar);
                let lhs = narrow_reordering_form(family, hbar, &fbp, &fp, &fbm, &fm)?;
                let rhs = narrow_causal_form(family, g, h, &g_bar, &h_nu)?;
                dev = dev.max((lhs - rhs).norm());
            }
            rep.push("narrow reordering form in causal variables", dev, 1e-10);
        }
    }
    Ok(rep)
}

/// Skeleton linear exponent `(eta_+ + J/hbar) A_+ - (eta_- + J/hbar) A_-` and
/// its causal image `eta a' + zeta' (j_e + J_e)`, with
/// `A_pm = a' pm hbar zeta'^(-+)`.
pub fn broad_linear_forms(
    eta: &Signal,
    j_e: &Signal,
    big_j: &Signal,
    a_p: &Signal,
    zeta_p: &Signal,
    hbar: f64,
) -> Result<(C64, C64)> {
    let (ep, em) = broad_substitute(eta, j_e, hbar)?;
    let (ap, am) = broad_substitute(&zeta_p.scale(real(hbar)), a_p, 1.0)?;
    let jj = big_j.scale(real(1.0 / hbar));
    let skeleton = contract_scalar(&ep.add(&jj), &ap)? - contract_scalar(&em.add(&jj), &am)?;
    let causal = contract_scalar(eta, a_p)? + contract_scalar(zeta_p, &j_e.add(big_j))?;
    Ok((skeleton, causal))
}

/// Narrow skeleton linear exponent
/// `mubar_+ E_+ + mu_+ Ebar_+ - mubar_- E_- - mu_- Ebar_-` and its causal image
/// `mubar e' + nubar' d_e - mu ebar' - nu' dbar_e` (both without the factor i).
pub fn narrow_linear_forms(c: &NarrowCausal, hbar: f64, phase: PhaseSpace) -> Result<(C64, C64)> {
    let s = narrow_substitute(c, hbar, phase)?;
    let skeleton = contract_scalar(&s.mu_bar_plus, &s.field_plus)? + contract_scalar(&s.mu_plus, &s.field_bar_plus)?
        - contract_scalar(&s.mu_bar_minus, &s.field_minus)?
        - contract_scalar(&s.mu_minus, &s.field_bar_minus)?;
    let causal = contract_scalar(&c.mu_bar, &c.e_p)? + contract_scalar(&c.nu_p_bar, &c.d_e)?
        - contract_scalar(&c.mu, &c.e_p_bar)?
        - contract_scalar(&c.nu_p, &c.d_bar)?;
    Ok((skeleton, causal))
}

/// Field emitted by a dipole source through the retarded envelope kernel,
/// `G_R d` or, on the conjugate branch, `G_R^* d`.
pub fn emit_retarded_field(source: &Signal, retarded: &StationaryKernel, conjugate: bool) -> Result<Signal> {
    if conjugate {
        apply_kernel_left(&retarded.conj(), source)
    } else {
        apply_kernel_left(retarded, source)
    }
}
