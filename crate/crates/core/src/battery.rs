//! Seeded random test signals.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fft;
use crate::grid::{Signal, SiteSet, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spectrum {
    /// Every bin populated.
    Full,
    /// DC and Nyquist bins left empty.
    NoEdges,
}

pub struct Battery {
    rng: ChaCha8Rng,
    pub seed: u64,
}

impl Battery {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), seed }
    }

    pub fn complex(&mut self) -> C64 {
        C64::new(self.rng.gen_range(-1.0..1.0), self.rng.gen_range(-1.0..1.0))
    }

    pub fn real(&mut self) -> f64 {
        self.rng.gen_range(-1.0..1.0)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn signal(&mut self, grid: TimeGrid, sites: &SiteSet, spectrum: Spectrum) -> Signal {
        let mut s = Signal::zeros(grid, sites.clone());
        let n = grid.n;
        for x in 0..sites.len() {
            let mut spec: Vec<C64> = (0..n).map(|_| self.complex()).collect();
            if spectrum == Spectrum::NoEdges {
                spec[0] = C64::new(0.0, 0.0);
                if n.is_multiple_of(2) {
                    spec[n / 2] = C64::new(0.0, 0.0);
                }
            }
            for (k, v) in fft::inverse(&spec).into_iter().enumerate() {
                s.values[[x, k]] = v * (n as f64).sqrt();
            }
        }
        s
    }

    pub fn real_signal(&mut self, grid: TimeGrid, sites: &SiteSet, spectrum: Spectrum) -> Signal {
        let s = self.signal(grid, sites, spectrum);
        s.with_values(s.values.mapv(|v| C64::new(v.re, 0.0)))
    }

    /// Sum of tones `exp(-i w t)` drawn from the listed frequencies with
    /// random complex amplitudes.
    pub fn tones(&mut self, grid: TimeGrid, sites: &SiteSet, omegas: &[f64]) -> Signal {
        let amps: Vec<Vec<C64>> = (0..sites.len()).map(|_| omegas.iter().map(|_| self.complex()).collect()).collect();
        Signal::from_fn(grid, sites.clone(), |x, t| {
            omegas.iter().zip(&amps[x]).map(|(w, a)| a * C64::from_polar(1.0, -w * t)).sum()
        })
    }
}
