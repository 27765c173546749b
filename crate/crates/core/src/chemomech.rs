//! Closed-form porosity of fully hydrated, noncarbonated fly-ash concrete
//! from cement and low-calcium fly ash chemistry.
//!
//! Porosity is `eps_air + W / rho_w` minus the volume reductions from cement
//! hydration and pozzolanic reaction. Which closed form applies depends on
//! whether the cement's SO3 exceeds what hydration of the available alumina
//! requires.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::MixRecord;
use crate::error::{Error, Result};

/// Density of water, kg/m³.
pub const WATER_DENSITY: f64 = 1000.0;

/// Weight fractions of the oxides entering the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OxideComposition {
    #[serde(rename = "CaO")]
    pub cao: f64,
    #[serde(rename = "SiO2")]
    pub sio2: f64,
    #[serde(rename = "Al2O3")]
    pub al2o3: f64,
    #[serde(rename = "Fe2O3")]
    pub fe2o3: f64,
    #[serde(rename = "SO3")]
    pub so3: f64,
}

impl OxideComposition {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cao, self.sio2, self.al2o3, self.fe2o3, self.so3];
        if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("oxide weight fractions must lie in [0, 1]"));
        }
        if all.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::param("oxide weight fractions sum above 1"));
        }
        Ok(())
    }
}

/// Reactive (glassy) fractions of the fly ash silica and alumina.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveFractions {
    pub gamma_s: f64,
    pub gamma_a: f64,
}

impl Default for ActiveFractions {
    fn default() -> Self {
        Self {
            gamma_s: 0.82,
            gamma_a: 0.82,
        }
    }
}

/// Composition file: cement and fly ash oxides plus active fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub cement: OxideComposition,
    pub fly_ash: OxideComposition,
    #[serde(rename = "gamma_S")]
    pub gamma_s: f64,
    #[serde(rename = "gamma_A")]
    pub gamma_a: f64,
}

impl Composition {
    /// Portland cement and low-calcium fly ash used in the reference
    /// experiments, with the commonly reported active fractions of 0.82.
    pub fn reference() -> Self {
        Self {
            cement: OxideComposition {
                cao: 0.646,
                sio2: 0.223,
                al2o3: 0.036,
                fe2o3: 0.036,
                so3: 0.019,
            },
            fly_ash: OxideComposition {
                cao: 0.021,
                sio2: 0.605,
                al2o3: 0.230,
                fe2o3: 0.075,
                so3: 0.003,
            },
            gamma_s: 0.82,
            gamma_a: 0.82,
        }
    }

    pub fn gamma(&self) -> ActiveFractions {
        ActiveFractions {
            gamma_s: self.gamma_s,
            gamma_a: self.gamma_a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cement.validate()?;
        self.fly_ash.validate()?;
        if !(0.0..=1.0).contains(&self.gamma_s) || !(0.0..=1.0).contains(&self.gamma_a) {
            return Err(Error::param("active fractions must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let c: Composition = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }
}

/// Mixture quantities per m³ of concrete.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemoMixInput {
    /// Cement, kg/m³.
    pub cement: f64,
    /// Fly ash, kg/m³.
    pub fly_ash: f64,
    /// Water, kg/m³.
    pub water: f64,
    /// Air volume fraction.
    #[serde(default)]
    pub eps_air: f64,
}

impl ChemoMixInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.cement > 0.0) {
            return Err(Error::param("cement content must be > 0"));
        }
        if !(self.fly_ash >= 0.0) {
            return Err(Error::param("fly ash content must be >= 0"));
        }
        if !(self.water > 0.0) {
            return Err(Error::param("water content must be > 0"));
        }
        if !(0.0..1.0).contains(&self.eps_air) {
            return Err(Error::param("air fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Cement, fly ash and water masses of a mixture record. Slag mixes are
    /// outside the model.
    pub fn from_record(r: &MixRecord) -> Result<Self> {
        if r.ggbs > 0.0 {
            return Err(Error::param(format!(
                "mix `{}` contains GGBS; the model covers fly ash only",
                r.mix_id
            )));
        }
        Ok(Self {
            cement: r.binder * (1.0 - r.fly_ash / 100.0),
            fly_ash: r.binder * r.fly_ash / 100.0,
            water: r.w_b * r.binder,
            eps_air: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GypsumBranch {
    /// More SO3 than the alumina needs.
    HighGypsum,
    /// SO3 at or below the requirement.
    LowGypsum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChemoResult {
    /// Volume fraction.
    pub porosity: f64,
    pub branch: GypsumBranch,
    /// Fly ash able to react, kg/m³; `None` only for inert ash in a plain
    /// cement mix.
    pub p_max: Option<f64>,
    /// Fly ash used in the pozzolanic term, kg/m³.
    pub p_effective: f64,
}

/// SO3 requirement of the cement alumina plus the reactive ash alumina.
pub fn gypsum_threshold(
    cement: &OxideComposition,
    ash: &OxideComposition,
    gamma: &ActiveFractions,
    c: f64,
    p: f64,
) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::param("cement content must be > 0"));
    }
    Ok(0.785 * cement.al2o3 - 0.501 * cement.fe2o3 + 0.785 * gamma.gamma_a * ash.al2o3 * (p / c))
}

pub fn gypsum_branch(
    cement: &OxideComposition,
    ash: &OxideComposition,
    gamma: &ActiveFractions,
    c: f64,
    p: f64,
) -> Result<GypsumBranch> {
    let threshold = gypsum_threshold(cement, ash, gamma, c, p)?;
    Ok(if cement.so3 > threshold {
        GypsumBranch::HighGypsum
    } else {
        GypsumBranch::LowGypsum
    })
}

/// Maximum fly ash, kg/m³, that the calcium hydroxide from `c` kg of cement
/// can bring into reaction.
pub fn p_max(
    cement: &OxideComposition,
    ash: &OxideComposition,
    gamma: &ActiveFractions,
    c: f64,
    branch: GypsumBranch,
) -> Result<f64> {
    let (num, den) = match branch {
        GypsumBranch::HighGypsum => (
            1.321 * (cement.cao - 0.7 * cement.so3)
                - 1.851 * cement.sio2
                - 2.182 * cement.al2o3
                - 1.392 * cement.fe2o3,
            1.851 * gamma.gamma_s * ash.sio2 + 2.182 * gamma.gamma_a * ash.al2o3,
        ),
        GypsumBranch::LowGypsum => (
            1.321 * cement.cao - 1.851 * cement.sio2 - 2.907 * cement.al2o3 - 0.928 * cement.fe2o3,
            1.851 * gamma.gamma_s * ash.sio2 + 2.907 * gamma.gamma_a * ash.al2o3,
        ),
    };
    if den <= 0.0 {
        return Err(Error::param("fly ash has no reactive silica or alumina"));
    }
    Ok(num * c / den)
}

pub fn papadakis_porosity(
    mix: &ChemoMixInput,
    cement: &OxideComposition,
    ash: &OxideComposition,
    gamma: &ActiveFractions,
) -> Result<ChemoResult> {
    mix.validate()?;
    let (c, p) = (mix.cement, mix.fly_ash);
    let branch = gypsum_branch(cement, ash, gamma, c, p)?;
    let p_max = match p_max(cement, ash, gamma, c, branch) {
        Ok(v) => Some(v),
        Err(e) if p > 0.0 => return Err(e),
        Err(_) => None,
    };
    let p_effective = p.min(p_max.unwrap_or(0.0).max(0.0));
    let (hydration, pozzolanic) = match branch {
        GypsumBranch::HighGypsum => (
            0.249 * (cement.cao - 0.7 * cement.so3) + 0.191 * cement.sio2 + 1.118 * cement.al2o3
                - 0.357 * cement.fe2o3,
            1.18 * gamma.gamma_a * ash.al2o3,
        ),
        GypsumBranch::LowGypsum => (
            0.249 * cement.cao - 0.1 * cement.sio2 + 0.191 * cement.sio2 + 1.059 * cement.al2o3
                - 0.319 * cement.fe2o3,
            1.121 * gamma.gamma_a * ash.al2o3,
        ),
    };
    let porosity = mix.eps_air + mix.water / WATER_DENSITY
        - hydration * (c / 1000.0)
        - pozzolanic * (p_effective / 1000.0);
    if porosity <= 0.0 {
        return Err(Error::Infeasible(format!(
            "computed porosity {porosity} is not positive; inputs are outside the model's validity"
        )));
    }
    Ok(ChemoResult {
        porosity,
        branch,
        p_max,
        p_effective,
    })
}
