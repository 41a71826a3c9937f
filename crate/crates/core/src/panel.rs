//! Aggregated count panels: regions × species totals with per-sample exposures.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PhibpError, Result};

/// Observed data for one fit or one held-out block.
///
/// `counts[j][l]` is `N_{j,l} = Σ_i N^{(i)}_{j,l}`; `exposures[j]` lists the
/// per-sample `γ_{i,j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountPanel {
    regions: Vec<String>,
    species: Vec<String>,
    counts: Vec<Vec<u64>>,
    exposures: Vec<Vec<f64>>,
    held_out: bool,
}

impl CountPanel {
    /// Training panel: every species must be observed at least once.
    pub fn new(
        regions: Vec<String>,
        species: Vec<String>,
        counts: Vec<Vec<u64>>,
        exposures: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let panel = Self::build(regions, species, counts, exposures, false)?;
        for l in 0..panel.n_species() {
            if panel.species_total(l) == 0 {
                return Err(PhibpError::Catalogue(format!(
                    "species `{}` has no observations",
                    panel.species[l]
                )));
            }
        }
        Ok(panel)
    }

    /// Held-out panel aligned to a training catalogue; species may be unobserved.
    pub fn held_out(
        regions: Vec<String>,
        species: Vec<String>,
        counts: Vec<Vec<u64>>,
        exposures: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::build(regions, species, counts, exposures, true)
    }

    fn build(
        regions: Vec<String>,
        species: Vec<String>,
        counts: Vec<Vec<u64>>,
        exposures: Vec<Vec<f64>>,
        held_out: bool,
    ) -> Result<Self> {
        if regions.is_empty() {
            return Err(PhibpError::Empty("panel has no regions".into()));
        }
        if counts.len() != regions.len() {
            return Err(PhibpError::LengthMismatch { left: counts.len(), right: regions.len() });
        }
        if exposures.len() != regions.len() {
            return Err(PhibpError::LengthMismatch { left: exposures.len(), right: regions.len() });
        }
        for row in &counts {
            if row.len() != species.len() {
                return Err(PhibpError::LengthMismatch { left: row.len(), right: species.len() });
            }
        }
        for (j, ex) in exposures.iter().enumerate() {
            if ex.is_empty() {
                return Err(invalid("exposures", format!("region `{}` has no samples", regions[j])));
            }
            if ex.iter().any(|&g| !(g.is_finite() && g > 0.0)) {
                return Err(invalid(
                    "exposures",
                    format!("region `{}` has a non-positive exposure", regions[j]),
                ));
            }
        }
        Ok(Self { regions, species, counts, exposures, held_out })
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn is_held_out(&self) -> bool {
        self.held_out
    }

    pub fn count(&self, j: usize, l: usize) -> u64 {
        self.counts[j][l]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn sample_exposures(&self, j: usize) -> &[f64] {
        &self.exposures[j]
    }

    pub fn all_sample_exposures(&self) -> &[Vec<f64>] {
        &self.exposures
    }

    /// `Γ_j = Σ_i γ_{i,j}`.
    pub fn total_exposure(&self, j: usize) -> f64 {
        self.exposures[j].iter().sum()
    }

    pub fn total_exposures(&self) -> Vec<f64> {
        (0..self.n_regions()).map(|j| self.total_exposure(j)).collect()
    }

    pub fn species_total(&self, l: usize) -> u64 {
        self.counts.iter().map(|row| row[l]).sum()
    }

    pub fn grand_total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Largest single `N_{j,l}`.
    pub fn max_count(&self) -> u64 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn region_max_count(&self, j: usize) -> u64 {
        self.counts[j].iter().copied().max().unwrap_or(0)
    }

    /// Fails unless `other` has the same regions and species in the same order.
    pub fn check_aligned(&self, other: &CountPanel) -> Result<()> {
        if self.regions != other.regions {
            return Err(PhibpError::Catalogue("region lists differ".into()));
        }
        if self.species != other.species {
            return Err(PhibpError::Catalogue("species catalogues differ".into()));
        }
        Ok(())
    }

    /// Canonical `(region, species, count)` CSV, zero cells omitted.
    pub fn to_canonical_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["region", "species", "count"])?;
        for (j, r) in self.regions.iter().enumerate() {
            for (l, s) in self.species.iter().enumerate() {
                let n = self.counts[j][l];
                if n > 0 {
                    w.write_record([r.as_str(), s.as_str(), &n.to_string()])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| PhibpError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Hex SHA-256 of [`Self::to_canonical_csv`] plus the exposures.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_canonical_csv()?.as_bytes());
        for (j, ex) in self.exposures.iter().enumerate() {
            h.update(format!("{}:{:?}\n", self.regions[j], ex).as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }
}
