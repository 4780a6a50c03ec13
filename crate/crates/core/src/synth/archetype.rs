use std::fmt;

use serde::{Deserialize, Serialize};

/// Latent land-use character of a place, which shapes both the daily
/// ridership curve and the POI mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    WorkLike,
    ResidentialLike,
    LeisureLike,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::WorkLike, Archetype::ResidentialLike, Archetype::LeisureLike];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::WorkLike => "work-like",
            Archetype::ResidentialLike => "residential-like",
            Archetype::LeisureLike => "leisure-like",
        }
    }

    /// Inflow shape over `bins` 15-minute bins starting at 06:00, peak near 1.
    ///
    /// People board near work in the evening and near home in the morning,
    /// so the work curve peaks late and the residential curve early. The
    /// leisure curve has equal morning and evening peaks under a broad
    /// afternoon hump.
    pub fn template(self, bins: usize) -> Vec<f64> {
        let bump = |t: f64, mu: f64, sd: f64| (-(t - mu).powi(2) / (2.0 * sd * sd)).exp();
        (0..bins)
            .map(|k| {
                let t = 6.0 + 0.25 * k as f64 + 0.125;
                match self {
                    Archetype::WorkLike => 0.12 + 0.25 * bump(t, 8.5, 0.6) + 0.35 * bump(t, 12.75, 0.7) + 1.0 * bump(t, 17.75, 0.8),
                    Archetype::ResidentialLike => 0.12 + 1.0 * bump(t, 8.0, 0.7) + 0.2 * bump(t, 13.0, 1.5) + 0.3 * bump(t, 18.25, 1.0),
                    Archetype::LeisureLike => {
                        0.2 + 0.78 * bump(t, 8.25, 0.6) + 0.35 * bump(t, 17.75, 0.6) + 0.55 * bump(t, 14.5, 2.2) + 0.45 * bump(t, 20.5, 1.0)
                    }
                }
            })
            .collect()
    }

    /// POIs per km² at a cluster centre, by indicator: office, sustenance,
    /// transport, retail, leisure, residence.
    pub fn poi_density(self) -> [f64; 6] {
        match self {
            Archetype::WorkLike => [60.0, 28.0, 8.0, 14.0, 4.0, 5.0],
            Archetype::ResidentialLike => [3.0, 7.0, 5.0, 8.0, 6.0, 55.0],
            Archetype::LeisureLike => [5.0, 34.0, 7.0, 26.0, 32.0, 10.0],
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mass of a template in a window of hours `[from, to)`.
pub fn window_mass(template: &[f64], from: f64, to: f64) -> f64 {
    template
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let t = 6.0 + 0.25 * *k as f64;
            t >= from && t < to
        })
        .map(|(_, v)| v)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_ordering() {
        let morning = |a: Archetype| window_mass(&a.template(64), 7.0, 10.0);
        let evening = |a: Archetype| window_mass(&a.template(64), 16.5, 19.5);
        let w = Archetype::WorkLike;
        let r = Archetype::ResidentialLike;
        let l = Archetype::LeisureLike;
        assert!(evening(w) > morning(w));
        assert!(morning(r) > evening(r));
        assert!((morning(l) - evening(l)).abs() < 0.1 * morning(l));
    }
}
