//! Experiment configuration.
//!
//! The format is a small INI dialect: `key = value` lines, optional
//! `[section]` headers, `#` comments. Top-level keys come before the first
//! section. Lists are comma separated.
//!
//! ```text
//! output_dir = out
//! seed = 0
//!
//! [fom]
//! kind = wave
//! cells = 500
//! wave_speed = 0.1
//! length = 1
//! dt = 0.02
//! t_final = 10
//!
//! [basis]
//! kinds = ordinary_pod, cotangent_lift
//! n = 10, 20, 40
//! centered = true
//!
//! [rom]
//! variants = galerkin, lsq_ham, consistent_ham
//!
//! [opinf]
//! enabled = true
//! reprojected = true
//! velocity_source = exact
//!
//! [test]
//! dt = 0.1
//! t_final = 100
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hamred_core::basis::BasisKind;
use hamred_core::fom::{Face, NewmarkParams};
use hamred_core::opinf::VelocitySource;
use hamred_core::rom::RomVariant;
use hamred_core::{Error, Result};

const SECTIONS: [&str; 6] = ["", "fom", "basis", "rom", "opinf", "test"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrator {
    Midpoint,
    Newmark(NewmarkParams),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FomKind {
    Wave {
        cells: usize,
        wave_speed: f64,
        length: f64,
    },
    Lattice {
        nx: usize,
        ny: usize,
        nz: usize,
        stiffness: f64,
        mass: f64,
        clamped_face: Face,
        kick_face: Face,
        kick_speed: f64,
    },
    Matrices {
        mass: PathBuf,
        stiffness: PathBuf,
        q0: Option<PathBuf>,
        qdot0: Option<PathBuf>,
    },
}

impl FomKind {
    pub fn name(&self) -> &'static str {
        match self {
            FomKind::Wave { .. } => "wave",
            FomKind::Lattice { .. } => "lattice",
            FomKind::Matrices { .. } => "matrices",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FomConfig {
    pub kind: FomKind,
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    pub integrator: Integrator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisConfig {
    pub kinds: Vec<BasisKind>,
    pub sizes: Vec<usize>,
    pub centered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RomConfig {
    pub variants: Vec<RomVariant>,
    pub centered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpInfConfig {
    pub enabled: bool,
    pub reprojected: bool,
    pub velocity_source: VelocitySource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestGrid {
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub fom: FomConfig,
    pub basis: BasisConfig,
    pub rom: RomConfig,
    pub opinf: OpInfConfig,
    pub test: Option<TestGrid>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Notes produced while parsing (duplicate list entries and the like).
    pub warnings: Vec<String>,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("malformed section header '{line}'"),
                    })?
                    .trim()
                    .to_ascii_lowercase();
                if !SECTIONS.contains(&name.as_str()) || name.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown section [{name}]"),
                    });
                }
                current = name;
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            let section = sections.entry(current.clone()).or_default();
            if section.contains_key(&key) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key '{key}'"),
                });
            }
            section.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line: line_no,
                    used: false,
                },
            );
        }
        Ok(Self { sections })
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| Error::Parse {
                line,
                message: format!("{}: invalid value '{v}': {e}", qualified(section, key)),
            }),
        }
    }

    fn require<T>(&mut self, section: &str, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(section, key)?.ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing required key {}", qualified(section, key)),
        })
    }

    fn list<T>(&mut self, section: &str, key: &str) -> Result<Option<(Vec<T>, usize)>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((v, line)) = self.take(section, key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| Error::Parse {
                    line,
                    message: format!("{}: invalid entry '{s}': {e}", qualified(section, key)),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Some((items, line)))
    }

    fn unused(&self) -> Option<(usize, String)> {
        self.sections
            .iter()
            .flat_map(|(s, m)| m.iter().map(move |(k, e)| (s, k, e)))
            .filter(|(_, _, e)| !e.used)
            .map(|(s, k, e)| (e.line, qualified(s, k)))
            .min()
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("[{section}] {key}")
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

#[derive(Clone, Copy)]
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_bool(s).map(Flag)
    }
}

/// Removes repeated entries keeping the first occurrence; returns a warning
/// when something was dropped.
fn dedup<T: PartialEq + Display>(items: Vec<T>, what: &str) -> (Vec<T>, Option<String>) {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    let mut dropped = Vec::new();
    for item in items {
        if out.contains(&item) {
            dropped.push(item.to_string());
        } else {
            out.push(item);
        }
    }
    let warning = (!dropped.is_empty()).then(|| format!("duplicate {what} entries ignored: {}", dropped.join(", ")));
    (out, warning)
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `text`; relative file paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let mut warnings = Vec::new();
        if !raw.has_section("fom") {
            return Err(Error::Parse {
                line: 0,
                message: "missing [fom] section".into(),
            });
        }

        let output_dir = resolve(base, raw.get::<PathBuf>("", "output_dir")?.unwrap_or_else(|| "out".into()));
        let seed = raw.get::<u64>("", "seed")?.unwrap_or(0);

        let kind_name: String = raw.require("fom", "kind")?;
        let kind = match kind_name.to_ascii_lowercase().as_str() {
            "wave" => FomKind::Wave {
                cells: raw.get("fom", "cells")?.unwrap_or(500),
                wave_speed: raw.get("fom", "wave_speed")?.unwrap_or(0.1),
                length: raw.get("fom", "length")?.unwrap_or(1.0),
            },
            "lattice" => FomKind::Lattice {
                nx: raw.get("fom", "nx")?.unwrap_or(3),
                ny: raw.get("fom", "ny")?.unwrap_or(3),
                nz: raw.get("fom", "nz")?.unwrap_or(3),
                stiffness: raw.get("fom", "stiffness")?.unwrap_or(1.0),
                mass: raw.get("fom", "mass")?.unwrap_or(1.0),
                clamped_face: raw.get("fom", "clamped_face")?.unwrap_or(Face::XMin),
                kick_face: raw.get("fom", "kick_face")?.unwrap_or(Face::XMax),
                kick_speed: raw.get("fom", "kick_speed")?.unwrap_or(1.0),
            },
            "matrices" => {
                let mass = resolve(base, raw.require::<PathBuf>("fom", "mass")?);
                let stiffness = resolve(base, raw.require::<PathBuf>("fom", "stiffness")?);
                let q0 = raw.get::<PathBuf>("fom", "q0")?.map(|p| resolve(base, p));
                let qdot0 = raw.get::<PathBuf>("fom", "qdot0")?.map(|p| resolve(base, p));
                for p in [Some(&mass), Some(&stiffness), q0.as_ref(), qdot0.as_ref()].into_iter().flatten() {
                    if !p.is_file() {
                        return Err(Error::InvalidArgument(format!("referenced file {} does not exist", p.display())));
                    }
                }
                FomKind::Matrices {
                    mass,
                    stiffness,
                    q0,
                    qdot0,
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown FOM kind '{other}' (expected wave, lattice or matrices)"
                )))
            }
        };
        let integrator = match raw
            .get::<String>("fom", "integrator")?
            .unwrap_or_else(|| "midpoint".into())
            .to_ascii_lowercase()
            .as_str()
        {
            "midpoint" => Integrator::Midpoint,
            "newmark" => {
                let d = NewmarkParams::default();
                Integrator::Newmark(NewmarkParams {
                    beta: raw.get("fom", "beta")?.unwrap_or(d.beta),
                    gamma: raw.get("fom", "gamma")?.unwrap_or(d.gamma),
                })
            }
            other => return Err(Error::InvalidArgument(format!("unknown integrator '{other}'"))),
        };
        if matches!(integrator, Integrator::Newmark(_)) && matches!(kind, FomKind::Wave { .. }) {
            return Err(Error::InvalidArgument(
                "the Newmark integrator needs a second-order model (lattice or matrices)".into(),
            ));
        }
        let fom = FomConfig {
            kind,
            dt: raw.require("fom", "dt")?,
            t_final: raw.require("fom", "t_final")?,
            sample_every: raw.get("fom", "sample_every")?.unwrap_or(1),
            integrator,
        };
        // Validates the grid early.
        hamred_core::TimeGrid::new(fom.t_final, fom.dt, fom.sample_every)?;

        let kinds = raw
            .list::<BasisKind>("basis", "kinds")?
            .map(|(v, _)| v)
            .unwrap_or_else(|| vec![BasisKind::OrdinaryPod]);
        let (kinds, w) = dedup(kinds, "basis kind");
        warnings.extend(w);
        if kinds.contains(&BasisKind::Custom) {
            return Err(Error::InvalidArgument("custom bases cannot be built from a config".into()));
        }
        let sizes = raw.list::<usize>("basis", "n")?.map(|(v, _)| v).unwrap_or_else(|| vec![10]);
        let (mut sizes, w) = dedup(sizes, "basis size");
        warnings.extend(w);
        if let Some(&bad) = sizes.iter().find(|&&n| n == 0 || n % 2 != 0) {
            return Err(Error::InvalidArgument(format!("basis size {bad} must be even and positive")));
        }
        sizes.sort_unstable();
        let basis_centered = raw.get::<Flag>("basis", "centered")?.map_or(true, |f| f.0);
        let basis = BasisConfig {
            kinds,
            sizes,
            centered: basis_centered,
        };

        let variants = raw
            .list::<RomVariant>("rom", "variants")?
            .map(|(v, _)| v)
            .unwrap_or_else(|| RomVariant::ALL.to_vec());
        let (variants, w) = dedup(variants, "ROM variant");
        warnings.extend(w);
        let rom = RomConfig {
            variants,
            centered: raw.get::<Flag>("rom", "centered")?.map_or(basis_centered, |f| f.0),
        };

        let opinf = OpInfConfig {
            enabled: raw.get::<Flag>("opinf", "enabled")?.map_or(false, |f| f.0),
            reprojected: raw.get::<Flag>("opinf", "reprojected")?.map_or(true, |f| f.0),
            velocity_source: raw.get("opinf", "velocity_source")?.unwrap_or(VelocitySource::Exact),
        };

        let test = if raw.has_section("test") {
            let t = TestGrid {
                dt: raw.require("test", "dt")?,
                t_final: raw.require("test", "t_final")?,
            };
            hamred_core::TimeGrid::new(t.t_final, t.dt, 1)?;
            if t.dt < fom.dt * fom.sample_every as f64 * (1.0 - 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "test dt {} is smaller than the training sampling interval {}",
                    t.dt,
                    fom.dt * fom.sample_every as f64
                )));
            }
            Some(t)
        } else {
            None
        };

        if let Some((line, key)) = raw.unused() {
            return Err(Error::Parse {
                line,
                message: format!("unknown key {key}"),
            });
        }

        Ok(Self {
            fom,
            basis,
            rom,
            opinf,
            test,
            output_dir,
            seed,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WAVE: &str = "
output_dir = results  # relative to the config file
seed = 7

[fom]
kind = wave
cells = 500
wave_speed = 0.1
length = 1
dt = 0.02
t_final = 10

[basis]
kinds = ordinary_pod, cotangent_lift, ordinary_pod
n = 20, 10, 20
centered = true

[rom]
variants = consistent_ham, lsq_ham

[opinf]
enabled = yes
velocity_source = central2

[test]
dt = 0.1
t_final = 100
";

    #[test]
    fn parses_full_config() {
        let c = ExperimentConfig::parse(WAVE, Path::new("/tmp/exp")).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/tmp/exp/results"));
        assert_eq!(c.seed, 7);
        assert_eq!(
            c.fom.kind,
            FomKind::Wave {
                cells: 500,
                wave_speed: 0.1,
                length: 1.0
            }
        );
        assert_eq!(c.basis.kinds, vec![BasisKind::OrdinaryPod, BasisKind::CotangentLift]);
        assert_eq!(c.basis.sizes, vec![10, 20]);
        assert_eq!(c.warnings.len(), 2);
        assert_eq!(c.rom.variants, vec![RomVariant::ConsistentHam, RomVariant::LeastSquaresHam]);
        assert!(c.rom.centered);
        assert!(c.opinf.enabled && c.opinf.reprojected);
        assert_eq!(c.opinf.velocity_source, VelocitySource::Central2);
        assert_eq!(c.test, Some(TestGrid { dt: 0.1, t_final: 100.0 }));
    }

    #[test]
    fn defaults_and_empty_lists() {
        let c = ExperimentConfig::parse("[fom]\nkind = wave\ndt = 0.1\nt_final = 1\n[rom]\nvariants =\n", Path::new(".")).unwrap();
        assert!(c.rom.variants.is_empty());
        assert_eq!(c.seed, 0);
        assert_eq!(c.basis.sizes, vec![10]);
        assert!(!c.opinf.enabled);
        assert!(c.test.is_none());
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = "[fom]\nkind = wave\ndt = 0.02\nt_final = 1\n";
        let bad = [
            format!("{base}[basis]\nn = 3\n"),
            format!("{base}[test]\ndt = 0.01\nt_final = 2\n"),
            format!("{base}bogus = 1\n"),
            format!("{base}[extra]\n"),
            format!("{base}dt = 0.1\n"),
            "[fom]\nkind = wave\ndt = 0.03\nt_final = 1\n".to_string(),
            "[fom]\nkind = matrices\nmass = /nonexistent.mtx\nstiffness = /nonexistent.mtx\ndt = 0.1\nt_final = 1\n".to_string(),
            "[basis]\nn = 2\n".to_string(),
        ];
        for text in &bad {
            assert!(ExperimentConfig::parse(text, Path::new(".")).is_err(), "accepted:\n{text}");
        }
    }
}
