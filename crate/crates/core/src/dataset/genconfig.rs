//! Flat `key = value` generator configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! n_subjects = 200
//! heart_rate = 55..95
//! duration = 10
//! fs = 250
//! jitter_std_deg = 10.6
//! rotation_std_deg = 20
//! packet_jitter = 0.3
//! device = identity
//! device = lowpass gain=1.3 taps=0.25;0.5;0.25 noise=0.01 wander=0.05@0.3
//! ```

use serde::{Deserialize, Serialize};

use crate::dipole::{DeviceProfile, DipoleError, DEFAULT_JITTER_STD_DEG};

/// Parsed from the flat format shown in the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_subjects: usize,
    /// Per-subject heart rate drawn uniformly from this range, bpm.
    pub heart_rate: (f64, f64),
    pub duration: f64,
    pub fs: f64,
    pub jitter_std_deg: f64,
    pub rotation_std_deg: f64,
    /// Relative per-packet amplitude perturbation per subject.
    pub packet_jitter: f64,
    pub devices: Vec<DeviceProfile>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_subjects: 200,
            heart_rate: (55.0, 95.0),
            duration: 10.0,
            fs: 250.0,
            jitter_std_deg: DEFAULT_JITTER_STD_DEG,
            rotation_std_deg: 20.0,
            packet_jitter: 0.0,
            devices: vec![DeviceProfile::identity()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key {key} on line {line}")]
    UnknownKey { line: usize, key: String },
    #[error(transparent)]
    Invalid(#[from] DipoleError),
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| ConfigError::Syntax {
        line,
        msg: format!("cannot parse {key} value {v:?}"),
    })
}

fn parse_device(line: usize, spec: &str) -> Result<DeviceProfile, ConfigError> {
    let mut parts = spec.split_whitespace();
    let name = parts.next().ok_or_else(|| ConfigError::Syntax {
        line,
        msg: "device needs a name".into(),
    })?;
    let mut p = DeviceProfile {
        name: name.into(),
        ..DeviceProfile::identity()
    };
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            msg: format!("expected key=value, got {kv:?}"),
        })?;
        match k {
            "gain" => p.gain = num(line, k, v)?,
            "noise" => p.noise_sigma = num(line, k, v)?,
            "wander" => {
                let (a, f) = v.split_once('@').ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: "wander is amplitude@hz".into(),
                })?;
                p.baseline_wander = (num(line, k, a)?, num(line, k, f)?);
            }
            "taps" => {
                p.fir_taps = v.split(';').map(|t| num(line, k, t)).collect::<Result<_, _>>()?;
            }
            "boxcar" => {
                let n: usize = num(line, k, v)?;
                p.fir_taps = vec![1.0 / n.max(1) as f64; n.max(1)];
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: format!("device.{k}"),
                })
            }
        }
    }
    Ok(p)
}

impl GeneratorConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = GeneratorConfig::default();
        let mut devices = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => cfg.seed = num(line, key, value)?,
                "n_subjects" => cfg.n_subjects = num(line, key, value)?,
                "duration" => cfg.duration = num(line, key, value)?,
                "fs" => cfg.fs = num(line, key, value)?,
                "jitter_std_deg" => cfg.jitter_std_deg = num(line, key, value)?,
                "rotation_std_deg" => cfg.rotation_std_deg = num(line, key, value)?,
                "packet_jitter" => cfg.packet_jitter = num(line, key, value)?,
                "heart_rate" => {
                    cfg.heart_rate = match value.split_once("..") {
                        Some((a, b)) => (num(line, key, a)?, num(line, key, b)?),
                        None => {
                            let v = num(line, key, value)?;
                            (v, v)
                        }
                    }
                }
                "device" => devices.push(parse_device(line, value)?),
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.into(),
                    })
                }
            }
        }
        if !devices.is_empty() {
            cfg.devices = devices;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DipoleError> {
        if self.n_subjects == 0 {
            return Err(DipoleError::InvalidConfig("n_subjects must be at least 1".into()));
        }
        if self.devices.is_empty() {
            return Err(DipoleError::InvalidConfig("at least one device profile is required".into()));
        }
        let (lo, hi) = self.heart_rate;
        if !(40.0..=180.0).contains(&lo) || !(40.0..=180.0).contains(&hi) || hi < lo {
            return Err(DipoleError::InvalidConfig(format!("heart_rate range {lo}..{hi}")));
        }
        for d in &self.devices {
            d.validate()?;
        }
        Ok(())
    }

    /// Stable digest of the configuration, recorded in manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        crate::dataset::pecg::file_checksum(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg = GeneratorConfig::parse(
            "seed = 7\nn_subjects=3 # few\nheart_rate = 60..80\nfs=500\nduration = 4\njitter_std_deg = 0\n\
             device = identity\ndevice = lp gain=1.3 taps=0.25;0.5;0.25 noise=0.01 wander=0.05@0.3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_subjects, 3);
        assert_eq!(cfg.heart_rate, (60.0, 80.0));
        assert_eq!(cfg.devices.len(), 2);
        assert_eq!(cfg.devices[1].fir_taps, vec![0.25, 0.5, 0.25]);
        assert_eq!(cfg.devices[1].baseline_wander, (0.05, 0.3));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            GeneratorConfig::parse("speed = 3"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(GeneratorConfig::parse("device = bad taps=0.5;0.6").is_err());
        assert!(GeneratorConfig::parse("n_subjects = 0").is_err());
    }
}
