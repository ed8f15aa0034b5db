//! Mean-field form of the dressing identity on the Fock oracle:
//! `<A(t)>` of the coupled system driven by `J_e` and `A_e` equals
//! `Delta_R J_e + Delta_R <J>` with `<J>` taken from a second run in which
//! `J_e` is replaced by the field it radiates, `A_e -> A_e + Delta_R J_e`.

use rayon::prelude::*;

use crate::dressing::cumulants::retarded_broad;
use crate::error::{LabError, Result};
use crate::fock::{expectation_series, FockSpace, OpLabel, Source, Sources, Stepping};
use crate::normal::radiated_field;

/// Panel width of the radiated-field quadrature.
const PANEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldRun {
    pub dt: f64,
    /// `<A(x, t_k)>` of the run with `J_e` and `A_e`.
    pub direct: Vec<f64>,
    /// `Delta_R J_e + Delta_R <J>` from the run with the shifted `A_e`.
    pub predicted: Vec<f64>,
    /// `max |direct - predicted| / max |direct|`.
    pub rel_error: f64,
}

/// Both sides of the identity at site `x` on `t_k = k dt`, `k = 0..=round(t_end/dt)`.
/// The retarded convolution with `<J>` uses the trapezoid rule on the samples.
pub fn mean_field_identity(
    space: &FockSpace,
    j_e: &Source,
    a_e: Option<&Source>,
    x: usize,
    t_end: f64,
    dt: f64,
) -> Result<MeanFieldRun> {
    let modes = space.broad.clone().ok_or_else(|| LabError::Invalid("the identity needs a broad mode set".into()))?;
    if !space.device.has_current() {
        return Err(LabError::Invalid("the identity needs a device with a current".into()));
    }
    let steps = (t_end / dt).round() as usize;
    let stepping = Stepping::new(0.0, dt)?;
    let direct_sources = Sources { j_e: Some(j_e.clone()), a_e: a_e.cloned(), ..Sources::none() };
    let radiated = {
        let (m, j) = (modes.clone(), j_e.clone());
        Source::new(move |xp, t| num_complex::Complex64::new(radiated_field(&m, &j, xp, 0.0, t, PANEL), 0.0))
    };
    let shifted = match a_e {
        Some(a) => a.sum(&radiated),
        None => radiated,
    };
    let shifted_sources = Sources { a_e: Some(shifted), ..Sources::none() };

    let m = modes.sites.len();
    let (direct, currents) = rayon::join(
        || expectation_series(space, OpLabel::A, x, &direct_sources, stepping, steps),
        || {
            (0..m)
                .into_par_iter()
                .map(|xp| expectation_series(space, OpLabel::J, xp, &shifted_sources, stepping, steps))
                .collect::<Result<Vec<_>>>()
        },
    );
    let direct: Vec<f64> = direct?.iter().map(|v| v.re).collect();
    let currents = currents?;

    let predicted: Vec<f64> = (0..=steps)
        .into_par_iter()
        .map(|k| {
            let t = stepping.time(k);
            let mut acc = radiated_field(&modes, j_e, x, 0.0, t, PANEL);
            for (xp, series) in currents.iter().enumerate() {
                let w = modes.sites.weight(xp);
                for (i, jv) in series.iter().enumerate().take(k + 1) {
                    let trap = if i == 0 || i == k { 0.5 } else { 1.0 };
                    acc += w * trap * dt * retarded_broad(&modes, x, xp, t - stepping.time(i)) * jv.re;
                }
            }
            acc
        })
        .collect();
    let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dev = direct.iter().zip(&predicted).fold(0.0f64, |a, (d, p)| a.max((d - p).abs()));
    Ok(MeanFieldRun { dt, direct, predicted, rel_error: if scale > 0.0 { dev / scale } else { dev } })
}
