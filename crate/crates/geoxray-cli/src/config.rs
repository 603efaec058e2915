//! Run configuration: JSON shape, structural validation (the shipped schema
//! in `schema/config.schema.json` is the published contract; this module
//! enforces it), and the config hash stamped into every report.

use geoxray::error::{Error, Result};
use geoxray::grid::{GridRef, SpatialGrid};
use geoxray::surface::{ConformalSurface, SurfaceSpec};
use geoxray::transport::{AttenuationPair, FanGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
    pub n_theta: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanSpec {
    pub n_beta: usize,
    pub n_alpha: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttenuationSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unitary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rays: Option<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauge_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ray_step: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceSpec,
    pub grid: GridSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fan: Option<FanSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree_profile: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attenuation: Option<AttenuationSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &str) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config '{path}': {e}")))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config does not match the schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n1 < 8 || self.grid.n2 < 8 {
            return Err(Error::Config("grid must be at least 8×8".into()));
        }
        if !self.grid.n_theta.is_power_of_two() || self.grid.n_theta < 8 {
            return Err(Error::Config("n_theta must be a power of two ≥ 8".into()));
        }
        if let Some(f) = &self.fan {
            if f.n_beta == 0 || f.n_alpha == 0 {
                return Err(Error::Config("fan sizes must be positive".into()));
            }
            if let Some(m) = f.alpha_margin {
                if !(m > 0.0 && m < 1.5) {
                    return Err(Error::Config("alpha_margin must lie in (0, 1.5)".into()));
                }
            }
        }
        if let Some(n) = self.n_channels {
            if n == 0 || n > 4 {
                return Err(Error::Config("n_channels must lie in 1..=4".into()));
            }
        }
        // surface constraints are checked by to_surface()
        self.surface.to_surface().map(|_| ())
    }

    pub fn surface(&self) -> Result<ConformalSurface> {
        self.surface.to_surface()
    }

    pub fn make_grid(&self, surface: &ConformalSurface) -> GridRef {
        SpatialGrid::new(surface, self.grid.n1, self.grid.n2)
    }

    pub fn fan_grid(&self) -> FanGrid {
        let f = self.fan.clone().unwrap_or(FanSpec {
            n_beta: 64,
            n_alpha: 24,
            alpha_margin: None,
        });
        let mut fan = FanGrid::new(f.n_beta, f.n_alpha);
        if let Some(m) = f.alpha_margin {
            fan.alpha_margin = m;
        }
        fan
    }

    pub fn attenuation(&self, grid: GridRef, n: usize) -> AttenuationPair {
        match &self.attenuation {
            None => AttenuationPair::zero(grid, n),
            Some(a) if a.zero.unwrap_or(false) => AttenuationPair::zero(grid, n),
            Some(a) => AttenuationPair::random(
                grid,
                n,
                a.seed.unwrap_or(1),
                a.scale.unwrap_or(0.5),
                a.unitary.unwrap_or(false),
            ),
        }
    }

    pub fn params(&self) -> Params {
        self.params.clone().unwrap_or_default()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (1..=5).collect())
    }

    /// SHA-256 of the canonical serialized config (field order fixed by the
    /// struct) — stamped into every report for attribution.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}
