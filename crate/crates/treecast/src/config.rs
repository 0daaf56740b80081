//! Experiment configuration: flat `key = value` lines grouped under
//! bracketed sections. Matrices are semicolon-separated rows. Parsing
//! is strict: unknown sections, unknown keys, and duplicate keys are
//! errors, and the whole file is validated before any computation.

use crate::channel::{Channel, ChannelError};
use crate::exact::DEFAULT_ATOM_BUDGET;
use crate::numfmt::short_hash;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Bad { line: usize, message: String },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

fn bad(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Bad {
        line,
        message: message.into(),
    }
}

/// Channel family named in the config, kept so sweeps can rebuild the
/// channel at other parameter values.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Bsc { delta: f64 },
    Qsym { q: usize, delta: f64 },
}

impl Preset {
    pub fn build(&self, delta: f64) -> Result<Channel, ChannelError> {
        match self {
            Preset::Bsc { .. } => Channel::bsc(delta),
            Preset::Qsym { q, .. } => Channel::qsym(*q, delta),
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            Preset::Bsc { delta } | Preset::Qsym { delta, .. } => *delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeChoice {
    Bary { arity: usize },
    Explicit { parents: Vec<Option<usize>> },
    Spherical { levels: Vec<usize> },
}

/// Noise regime with optional levels; a missing level means "compute
/// the certified threshold" for certify and "noiseless" elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub enum RegimeConfig {
    ExtraSteps { k: Option<u32> },
    Mix { nu: Option<Vec<f64>>, eps: Option<f64> },
    Erasure { eps: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Tv,
    Recon,
    Census,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub channel: Channel,
    pub preset: Option<Preset>,
    pub delta_grid: Vec<f64>,
    pub tree: TreeChoice,
    pub depth: usize,
    pub depth_grid: Vec<usize>,
    /// Explicit antichain request; default is the deepest level or the
    /// leaf set, depending on the tree kind.
    pub antichain: Option<Vec<usize>>,
    /// Growth parameter for finite-tree certificates and the antichain
    /// dynamic program.
    pub growth: Option<f64>,
    pub regime: RegimeConfig,
    pub k_grid: Vec<u32>,
    pub eps_grid: Vec<f64>,
    pub samples: u64,
    pub seed: u64,
    pub streams: u64,
    pub estimators: Vec<Estimator>,
    /// Root-state pair compared by TV and census estimators.
    pub root_pair: (usize, usize),
    pub decay_levels: usize,
    pub kstar_cap: u32,
    pub cutset_bound: f64,
    pub atom_budget: usize,
    pub out_path: Option<PathBuf>,
    pub timestamp: bool,
    /// Hash of the raw config text, embedded in every output header.
    pub config_hash: String,
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

fn split_sections(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| bad(lineno, "unterminated section header"))?
                .trim()
                .to_string();
            if sections.iter().any(|s| s.name == name) {
                return Err(bad(lineno, format!("duplicate section [{name}]")));
            }
            sections.push(Section {
                name,
                line: lineno,
                entries: Vec::new(),
            });
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(lineno, "expected key = value"))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| bad(lineno, "key before any section"))?;
        let key = k.trim().to_string();
        if section.entries.iter().any(|(ek, _, _)| *ek == key) {
            return Err(bad(lineno, format!("duplicate key {key}")));
        }
        section.entries.push((key, v.trim().to_string(), lineno));
    }
    Ok(sections)
}

/// Typed accessor over one section that records which keys were read,
/// so leftovers can be rejected.
struct Keys<'a> {
    entries: &'a [(String, String, usize)],
    used: Vec<bool>,
}

impl<'a> Keys<'a> {
    fn new(s: &'a Section) -> Self {
        Keys {
            entries: &s.entries,
            used: vec![false; s.entries.len()],
        }
    }

    fn take(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (i, (k, v, l)) in self.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                return Some((v.as_str(), *l));
            }
        }
        None
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (i, (k, _, l)) in self.entries.iter().enumerate() {
            if !self.used[i] {
                return Err(bad(*l, format!("unknown key {k}")));
            }
        }
        Ok(())
    }
}

fn parse_f64(v: &str, l: usize, key: &str) -> Result<f64, ConfigError> {
    v.parse()
        .map_err(|_| bad(l, format!("bad number for {key}")))
}

fn parse_usize(v: &str, l: usize, key: &str) -> Result<usize, ConfigError> {
    v.parse()
        .map_err(|_| bad(l, format!("bad integer for {key}")))
}

fn parse_f64_list(v: &str, l: usize, key: &str) -> Result<Vec<f64>, ConfigError> {
    v.split_whitespace()
        .map(|t| parse_f64(t, l, key))
        .collect()
}

fn parse_bool(v: &str, l: usize, key: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(l, format!("{key} must be true or false"))),
    }
}

fn parse_preset(v: &str, l: usize) -> Result<Preset, ConfigError> {
    let inner = |name: &str| -> Option<&str> {
        v.strip_prefix(name)
            .and_then(|r| r.strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
    };
    if let Some(args) = inner("bsc") {
        return Ok(Preset::Bsc {
            delta: parse_f64(args.trim(), l, "bsc delta")?,
        });
    }
    if let Some(args) = inner("qsym") {
        let mut parts = args.split(',');
        let q = parts
            .next()
            .ok_or_else(|| bad(l, "qsym needs q and delta"))?;
        let delta = parts
            .next()
            .ok_or_else(|| bad(l, "qsym needs q and delta"))?;
        if parts.next().is_some() {
            return Err(bad(l, "qsym takes exactly two arguments"));
        }
        return Ok(Preset::Qsym {
            q: parse_usize(q.trim(), l, "qsym q")?,
            delta: parse_f64(delta.trim(), l, "qsym delta")?,
        });
    }
    Err(bad(l, "unknown preset, expected bsc(...) or qsym(...)"))
}

fn parse_rows(v: &str, l: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
    v.split(';')
        .map(|row| parse_f64_list(row.trim(), l, "rows"))
        .collect()
}

fn parse_parents(v: &str, l: usize) -> Result<Vec<Option<usize>>, ConfigError> {
    v.split_whitespace()
        .map(|t| {
            if t == "-" {
                Ok(None)
            } else {
                t.parse().map(Some).map_err(|_| bad(l, "bad parent index"))
            }
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let sections = split_sections(text)?;
        for s in &sections {
            match s.name.as_str() {
                "channel" | "tree" | "noise" | "mc" | "certify" | "output" => {}
                other => return Err(bad(s.line, format!("unknown section [{other}]"))),
            }
        }
        let find = |name: &str| sections.iter().find(|s| s.name == name);

        let ch = find("channel")
            .ok_or_else(|| bad(0, "missing [channel] section"))?;
        let mut keys = Keys::new(ch);
        let preset_kv = keys.take("preset");
        let rows_kv = keys.take("rows");
        let delta_grid = match keys.take("delta_grid") {
            Some((v, l)) => parse_f64_list(v, l, "delta_grid")?,
            None => Vec::new(),
        };
        keys.finish()?;
        let (channel, preset) = match (preset_kv, rows_kv) {
            (Some((v, l)), None) => {
                let p = parse_preset(v, l)?;
                (p.build(p.delta())?, Some(p))
            }
            (None, Some((v, l))) => {
                let rows = parse_rows(v, l)?;
                (Channel::from_rows(&rows)?, None)
            }
            (Some((_, l)), Some(_)) => {
                return Err(bad(l, "give either preset or rows, not both"))
            }
            (None, None) => return Err(bad(ch.line, "channel needs preset or rows")),
        };
        if !delta_grid.is_empty() && preset.is_none() {
            return Err(bad(ch.line, "delta_grid requires a preset channel"));
        }

        let mut tree = TreeChoice::Bary { arity: 2 };
        let mut depth = 3usize;
        let mut depth_grid = Vec::new();
        let mut antichain = None;
        let mut growth = None;
        if let Some(tr) = find("tree") {
            let mut keys = Keys::new(tr);
            let kind = keys.take("kind").map(|(v, l)| (v.to_string(), l));
            let arity = keys.take("arity");
            let parents = keys.take("parents");
            let file = keys.take("file");
            let levels = keys.take("levels");
            if let Some((v, l)) = keys.take("depth") {
                depth = parse_usize(v, l, "depth")?;
            }
            if let Some((v, l)) = keys.take("depth_grid") {
                depth_grid = v
                    .split_whitespace()
                    .map(|t| parse_usize(t, l, "depth_grid"))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            if let Some((v, l)) = keys.take("antichain") {
                antichain = Some(
                    v.split_whitespace()
                        .map(|t| parse_usize(t, l, "antichain"))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            if let Some((v, l)) = keys.take("growth") {
                growth = Some(parse_f64(v, l, "growth")?);
            }
            keys.finish()?;
            let kind_name = kind
                .as_ref()
                .map(|(v, _)| v.as_str())
                .unwrap_or("bary");
            let kline = kind.as_ref().map(|(_, l)| *l).unwrap_or(tr.line);
            tree = match kind_name {
                "bary" => {
                    let a = match arity {
                        Some((v, l)) => parse_usize(v, l, "arity")?,
                        None => 2,
                    };
                    TreeChoice::Bary { arity: a }
                }
                "explicit" => {
                    let parents = match (parents, file) {
                        (Some((v, l)), None) => parse_parents(v, l)?,
                        (None, Some((v, l))) => {
                            let text = std::fs::read_to_string(v).map_err(|e| {
                                bad(l, format!("cannot read tree file {v}: {e}"))
                            })?;
                            let t = crate::tree::Tree::from_edge_lines(&text)
                                .map_err(|e| bad(l, e.to_string()))?;
                            (0..t.node_count()).map(|x| t.parent_of(x)).collect()
                        }
                        (None, None) => {
                            return Err(bad(kline, "explicit tree needs parents or file"))
                        }
                        (Some((_, l)), Some(_)) => {
                            return Err(bad(l, "give either parents or file, not both"))
                        }
                    };
                    TreeChoice::Explicit { parents }
                }
                "spherical" => {
                    let (v, l) = levels
                        .ok_or_else(|| bad(kline, "spherical tree needs levels"))?;
                    TreeChoice::Spherical {
                        levels: v
                            .split_whitespace()
                            .map(|t| parse_usize(t, l, "levels"))
                            .collect::<Result<Vec<_>, _>>()?,
                    }
                }
                other => return Err(bad(kline, format!("unknown tree kind {other}"))),
            };
        }

        let mut regime = RegimeConfig::ExtraSteps { k: None };
        let mut k_grid = Vec::new();
        let mut eps_grid = Vec::new();
        if let Some(no) = find("noise") {
            let mut keys = Keys::new(no);
            let name = keys.take("regime").map(|(v, l)| (v.to_string(), l));
            let k = keys.take("k");
            let eps = keys.take("eps");
            let nu = keys.take("nu");
            if let Some((v, l)) = keys.take("k_grid") {
                k_grid = v
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad(l, "bad k_grid entry")))
                    .collect::<Result<Vec<u32>, _>>()?;
            }
            if let Some((v, l)) = keys.take("eps_grid") {
                eps_grid = parse_f64_list(v, l, "eps_grid")?;
            }
            keys.finish()?;
            let rname = name.as_ref().map(|(v, _)| v.as_str()).unwrap_or("extra_steps");
            let rline = name.as_ref().map(|(_, l)| *l).unwrap_or(no.line);
            let k_val = match k {
                Some((v, l)) => Some(
                    v.parse::<u32>()
                        .map_err(|_| bad(l, "bad integer for k"))?,
                ),
                None => None,
            };
            let eps_val = match eps {
                Some((v, l)) => Some(parse_f64(v, l, "eps")?),
                None => None,
            };
            let nu_val = match nu {
                Some((v, l)) => Some(parse_f64_list(v, l, "nu")?),
                None => None,
            };
            regime = match rname {
                "extra_steps" => {
                    if eps_val.is_some() || nu_val.is_some() {
                        return Err(bad(rline, "extra_steps takes k only"));
                    }
                    RegimeConfig::ExtraSteps { k: k_val }
                }
                "mix" => {
                    if k_val.is_some() {
                        return Err(bad(rline, "mix takes eps and nu, not k"));
                    }
                    RegimeConfig::Mix {
                        nu: nu_val,
                        eps: eps_val,
                    }
                }
                "erasure" => {
                    if k_val.is_some() || nu_val.is_some() {
                        return Err(bad(rline, "erasure takes eps only"));
                    }
                    RegimeConfig::Erasure { eps: eps_val }
                }
                other => return Err(bad(rline, format!("unknown regime {other}"))),
            };
        }

        let mut samples = 10_000u64;
        let mut seed = 0u64;
        let mut streams = 16u64;
        let mut estimators = vec![Estimator::Tv, Estimator::Recon];
        let mut root_pair = (0usize, 1usize);
        if let Some(mc) = find("mc") {
            let mut keys = Keys::new(mc);
            if let Some((v, l)) = keys.take("samples") {
                samples = v.parse().map_err(|_| bad(l, "bad samples"))?;
            }
            if let Some((v, l)) = keys.take("seed") {
                seed = v.parse().map_err(|_| bad(l, "bad seed"))?;
            }
            if let Some((v, l)) = keys.take("streams") {
                streams = v.parse().map_err(|_| bad(l, "bad streams"))?;
                if streams == 0 {
                    return Err(bad(l, "streams must be positive"));
                }
            }
            if let Some((v, l)) = keys.take("estimators") {
                estimators = v
                    .split_whitespace()
                    .map(|t| match t {
                        "tv" => Ok(Estimator::Tv),
                        "recon" => Ok(Estimator::Recon),
                        "census" => Ok(Estimator::Census),
                        other => Err(bad(l, format!("unknown estimator {other}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            }
            if let Some((v, l)) = keys.take("root_pair") {
                let pair = v
                    .split_whitespace()
                    .map(|t| parse_usize(t, l, "root_pair"))
                    .collect::<Result<Vec<_>, _>>()?;
                if pair.len() != 2 {
                    return Err(bad(l, "root_pair needs exactly two states"));
                }
                root_pair = (pair[0], pair[1]);
            }
            keys.finish()?;
        }

        let mut decay_levels = 5usize;
        let mut kstar_cap = 64u32;
        let mut cutset_bound = 0.2f64;
        if let Some(ce) = find("certify") {
            let mut keys = Keys::new(ce);
            if let Some((v, l)) = keys.take("decay_levels") {
                decay_levels = parse_usize(v, l, "decay_levels")?;
            }
            if let Some((v, l)) = keys.take("kstar_cap") {
                kstar_cap = v.parse().map_err(|_| bad(l, "bad kstar_cap"))?;
            }
            if let Some((v, l)) = keys.take("cutset_bound") {
                cutset_bound = parse_f64(v, l, "cutset_bound")?;
            }
            keys.finish()?;
        }

        let mut atom_budget = DEFAULT_ATOM_BUDGET;
        let mut out_path = None;
        let mut timestamp = true;
        if let Some(ou) = find("output") {
            let mut keys = Keys::new(ou);
            if let Some((v, _)) = keys.take("path") {
                out_path = Some(PathBuf::from(v));
            }
            if let Some((v, l)) = keys.take("timestamp") {
                timestamp = parse_bool(v, l, "timestamp")?;
            }
            if let Some((v, l)) = keys.take("budget") {
                atom_budget = parse_usize(v, l, "budget")?;
            }
            keys.finish()?;
        }

        let q = channel.q();
        if root_pair.0 >= q || root_pair.1 >= q {
            return Err(bad(0, "root_pair states exceed the alphabet"));
        }
        if let RegimeConfig::Mix { nu: Some(nu), .. } = &regime {
            if nu.len() != q {
                return Err(bad(0, "nu length does not match the alphabet"));
            }
        }

        Ok(ExperimentConfig {
            channel,
            preset,
            delta_grid,
            tree,
            depth,
            depth_grid,
            antichain,
            growth,
            regime,
            k_grid,
            eps_grid,
            samples,
            seed,
            streams,
            estimators,
            root_pair,
            decay_levels,
            kstar_cap,
            cutset_bound,
            atom_budget,
            out_path,
            timestamp,
            config_hash: short_hash(text),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
[channel]
preset = bsc(0.3)

[tree]
kind = bary
arity = 2
depth = 4

[noise]
regime = mix
nu = 0.5 0.5
eps = 0.25

[mc]
samples = 2000
seed = 7
streams = 8
estimators = tv census
root_pair = 0 1

[certify]
decay_levels = 4

[output]
timestamp = false
budget = 500000
";

    #[test]
    fn full_config_parses() {
        let cfg = ExperimentConfig::parse(FULL).unwrap();
        assert_eq!(cfg.channel.q(), 2);
        assert_eq!(cfg.preset, Some(Preset::Bsc { delta: 0.3 }));
        assert_eq!(cfg.tree, TreeChoice::Bary { arity: 2 });
        assert_eq!(cfg.depth, 4);
        assert_eq!(
            cfg.regime,
            RegimeConfig::Mix {
                nu: Some(vec![0.5, 0.5]),
                eps: Some(0.25)
            }
        );
        assert_eq!(cfg.samples, 2000);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.streams, 8);
        assert_eq!(cfg.estimators, vec![Estimator::Tv, Estimator::Census]);
        assert_eq!(cfg.decay_levels, 4);
        assert!(!cfg.timestamp);
        assert_eq!(cfg.atom_budget, 500_000);
        assert_eq!(cfg.config_hash.len(), 16);
    }

    #[test]
    fn rows_channel_parses() {
        let cfg = ExperimentConfig::parse(
            "[channel]\nrows = 0.7 0.3; 0.3 0.7\n",
        )
        .unwrap();
        assert_eq!(cfg.channel.q(), 2);
        assert!(cfg.preset.is_none());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = ExperimentConfig::parse("[channel]\npreset = bsc(0.3)\ncolor = red\n")
            .unwrap_err();
        assert!(err.to_string().contains("unknown key color"), "{err}");
    }

    #[test]
    fn unknown_section_is_an_error() {
        let err =
            ExperimentConfig::parse("[channel]\npreset = bsc(0.3)\n[plots]\nx = 1\n")
                .unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = ExperimentConfig::parse(
            "[channel]\npreset = bsc(0.3)\npreset = bsc(0.2)\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate key"), "{err}");
    }

    #[test]
    fn explicit_parents_parse() {
        let cfg = ExperimentConfig::parse(
            "[channel]\npreset = bsc(0.3)\n[tree]\nkind = explicit\nparents = - 0 0 1 1\n",
        )
        .unwrap();
        assert_eq!(
            cfg.tree,
            TreeChoice::Explicit {
                parents: vec![None, Some(0), Some(0), Some(1), Some(1)]
            }
        );
    }

    #[test]
    fn regime_keys_are_mutually_exclusive() {
        let err = ExperimentConfig::parse(
            "[channel]\npreset = bsc(0.3)\n[noise]\nregime = erasure\nk = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("erasure takes eps only"), "{err}");
    }

    #[test]
    fn grids_parse() {
        let cfg = ExperimentConfig::parse(
            "[channel]\npreset = bsc(0.3)\ndelta_grid = 0.1 0.2\n[tree]\ndepth_grid = 1 2 3\n[noise]\nregime = mix\neps_grid = 0.0 0.5 1.0\n",
        )
        .unwrap();
        assert_eq!(cfg.delta_grid, vec![0.1, 0.2]);
        assert_eq!(cfg.depth_grid, vec![1, 2, 3]);
        assert_eq!(cfg.eps_grid, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn delta_grid_needs_preset() {
        let err = ExperimentConfig::parse(
            "[channel]\nrows = 0.7 0.3; 0.3 0.7\ndelta_grid = 0.1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("requires a preset"), "{err}");
    }

    #[test]
    fn hash_tracks_text() {
        let a = ExperimentConfig::parse("[channel]\npreset = bsc(0.3)\n").unwrap();
        let b = ExperimentConfig::parse("[channel]\npreset = bsc(0.31)\n").unwrap();
        assert_ne!(a.config_hash, b.config_hash);
    }
}
