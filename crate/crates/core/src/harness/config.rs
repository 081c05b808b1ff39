use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    check_nyquist, gaussian_coefficients, sample_count, split_step_limit, DoubletModel,
    KineticModel, PacketCoefficients, Propagator, SignalSettings, SUPPORT_GUARD,
};
use crate::lattice::{build_grid, LatticeConfig};
use crate::spectral::{
    check_site_range_folds, fold_resolution_check, AmplitudeMethod, FrequencyModel,
    ReconstructionSettings, Window,
};
use crate::{Error, Result};

/// Everything a run needs, read from TOML. Missing sections and fields take
/// their defaults, unknown ones are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub basis: BasisConfig,
    pub packet: PacketConfig,
    pub evolution: EvolutionConfig,
    pub reconstruction: ReconstructionConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    /// Sites that get a site state.
    pub sites: (i32, i32),
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig { sites: (10, 32) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketConfig {
    pub n0: i32,
    pub delta_n: f64,
    pub phase_gradient: f64,
    /// Explicit amplitudes; replaces the Gaussian when present.
    pub amplitudes: Option<Vec<SiteAmplitude>>,
}

impl Default for PacketConfig {
    fn default() -> Self {
        PacketConfig {
            n0: 21,
            delta_n: 7.0,
            phase_gradient: PI / 4.0,
            amplitudes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteAmplitude {
    pub n: i32,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorChoice {
    #[default]
    Eigen,
    Splitstep,
}

impl std::str::FromStr for PropagatorChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" => Ok(PropagatorChoice::Eigen),
            "splitstep" => Ok(PropagatorChoice::Splitstep),
            _ => Err(Error::Config(format!(
                "unknown propagator '{s}', expected eigen or splitstep"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub t_total: f64,
    pub dt: f64,
    pub propagator: PropagatorChoice,
    /// Split-step integration step; half the stability bound when absent.
    pub dt_int: Option<f64>,
    pub kinetic: KineticModel,
    pub doublets: DoubletModel,
    pub probe_momentum: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        let s = SignalSettings::default();
        EvolutionConfig {
            t_total: s.t_total,
            dt: s.dt,
            propagator: PropagatorChoice::Eigen,
            dt_int: None,
            kinetic: KineticModel::default(),
            doublets: DoubletModel::default(),
            probe_momentum: s.probe_momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyChoice {
    #[default]
    Energies,
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Amplitude sites to reconstruct; the packet support when absent.
    pub sites: Option<(i32, i32)>,
    pub window: Window,
    pub significance: f64,
    pub frequencies: FrequencyChoice,
    pub amplitudes: AmplitudeMethod,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        let s = ReconstructionSettings::default();
        ReconstructionConfig {
            sites: None,
            window: s.window,
            significance: s.significance,
            frequencies: FrequencyChoice::Energies,
            amplitudes: s.amplitudes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

fn digest(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of every field except the output location.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        digest(&c)
    }

    /// Key of the eigensolve cache: lattice and basis sites only.
    pub fn lattice_hash(&self) -> String {
        digest(&(&self.lattice, &self.basis))
    }

    /// Key of a recorded signal: everything upstream of reconstruction.
    pub fn signal_hash(&self) -> String {
        digest(&(&self.lattice, &self.basis, &self.packet, &self.evolution))
    }

    /// Checks the lattice and basis; enough for the spectrum stage.
    pub fn validate_lattice(&self) -> Result<()> {
        self.lattice.validate()?;
        let (lo, hi) = self.basis.sites;
        if lo < 1 || hi < lo {
            return Err(Error::Config(format!(
                "basis sites must satisfy 1 <= lo <= hi, got {lo}..={hi}"
            )));
        }
        self.lattice.check_support(lo, hi, SUPPORT_GUARD)
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> Result<()> {
        self.validate_lattice()?;
        let coeffs = self.packet_coefficients()?;
        let (blo, bhi) = self.basis.sites;
        let (plo, phi) = coeffs.support();
        if plo < blo || phi > bhi {
            return Err(Error::Config(format!(
                "packet sites {plo}..={phi} are outside the basis sites {blo}..={bhi}"
            )));
        }
        let ev = &self.evolution;
        sample_count(ev.t_total, ev.dt)?;
        check_nyquist(ev.dt, self.lattice.n_max)?;
        if !ev.probe_momentum.is_finite() {
            return Err(Error::Config("probe momentum must be finite".into()));
        }
        if ev.propagator == PropagatorChoice::Splitstep {
            let limit = split_step_limit(&self.lattice, &build_grid(&self.lattice)?);
            let dt_int = self.dt_int()?;
            if !(dt_int > 0.0 && dt_int < limit) {
                return Err(Error::StepTooLarge { dt_int, limit });
            }
        }
        let r = &self.reconstruction;
        if !(r.significance > 0.0 && r.significance.is_finite()) {
            return Err(Error::Config(format!(
                "significance multiplier must be positive, got {}",
                r.significance
            )));
        }
        if let Some((lo, hi)) = r.sites {
            if hi <= lo {
                return Err(Error::Config(format!(
                    "reconstruction sites need lo < hi, got {lo}..={hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn dt_int(&self) -> Result<f64> {
        match self.evolution.dt_int {
            Some(d) => Ok(d),
            None => Ok(0.5 * split_step_limit(&self.lattice, &build_grid(&self.lattice)?)),
        }
    }

    pub fn packet_coefficients(&self) -> Result<PacketCoefficients> {
        match &self.packet.amplitudes {
            Some(list) => {
                if list.is_empty() {
                    return Err(Error::Packet("explicit amplitude list is empty".into()));
                }
                let mut c = BTreeMap::new();
                for a in list {
                    if c.insert(a.n, Complex64::new(a.re, a.im)).is_some() {
                        return Err(Error::Packet(format!("site {} listed twice", a.n)));
                    }
                }
                PacketCoefficients::from_amplitudes(c)
            }
            None => gaussian_coefficients(self.packet.n0, self.packet.delta_n, self.packet.phase_gradient),
        }
    }

    /// Fails with the inequality's numbers if the two folds would overlap.
    pub fn check_folds(&self, coeffs: &PacketCoefficients) -> Result<()> {
        if self.packet.amplitudes.is_none() {
            let r = fold_resolution_check(self.packet.n0, self.packet.delta_n);
            if !r.resolved {
                return Err(Error::FoldOverlap(format!(
                    "n0={}, delta_n={}: n0 + delta_n/2 + 1/2 = {} is not below \
                     2(n0 - delta_n/2 - 1) = {}",
                    self.packet.n0, self.packet.delta_n, r.first_fold_top, r.second_fold_bottom
                )));
            }
        }
        let (lo, hi) = self.reconstruction_sites(coeffs);
        check_site_range_folds(lo, hi).map(|_| ())
    }

    pub fn reconstruction_sites(&self, coeffs: &PacketCoefficients) -> (i32, i32) {
        self.reconstruction.sites.unwrap_or_else(|| {
            let (lo, hi) = coeffs.support();
            if lo == hi {
                (lo - 1, hi + 1)
            } else {
                (lo, hi)
            }
        })
    }

    pub fn signal_settings(&self) -> Result<SignalSettings> {
        let ev = &self.evolution;
        let propagator = match ev.propagator {
            PropagatorChoice::Eigen => Propagator::Eigenbasis,
            PropagatorChoice::Splitstep => Propagator::SplitStep {
                dt_int: self.dt_int()?,
                kinetic: ev.kinetic,
            },
        };
        Ok(SignalSettings {
            t_total: ev.t_total,
            dt: ev.dt,
            probe_momentum: ev.probe_momentum,
            propagator,
        })
    }

    pub fn reconstruction_settings(&self, energies: Option<BTreeMap<i32, f64>>) -> ReconstructionSettings {
        let r = &self.reconstruction;
        let frequencies = match (r.frequencies, energies) {
            (FrequencyChoice::Energies, Some(e)) => FrequencyModel::Energies(e),
            _ => FrequencyModel::Ideal,
        };
        ReconstructionSettings {
            window: r.window,
            significance: r.significance,
            frequencies,
            amplitudes: r.amplitudes,
            ..ReconstructionSettings::default()
        }
    }
}
