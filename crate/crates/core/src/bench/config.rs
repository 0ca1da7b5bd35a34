//! Flat `key = value` run configuration.
//!
//! ```text
//! # 2x2 grid, 20 users
//! scheme = dpt
//! grid_side = 2
//! num_users = 20
//! seeds = 1,2,3
//! ```

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::actor::DEFAULT_FILTERS;
use crate::baselines::{AbsConfig, DdpgConfig};
use crate::learner::LearnerConfig;
use crate::netsim::ScenarioConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Dpt,
    Ddpg,
    Abs,
    MaxPower,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Dpt => "dpt",
            Scheme::Ddpg => "ddpg",
            Scheme::Abs => "abs",
            Scheme::MaxPower => "maxpower",
        }
    }

    /// Static schemes produce a single allocation and a single record.
    pub fn is_static(self) -> bool {
        matches!(self, Scheme::Abs | Scheme::MaxPower)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dpt" => Ok(Scheme::Dpt),
            "ddpg" => Ok(Scheme::Ddpg),
            "abs" => Ok(Scheme::Abs),
            "maxpower" => Ok(Scheme::MaxPower),
            other => Err(format!("unknown scheme `{other}` (expected dpt, ddpg, abs or maxpower)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub scenario: ScenarioConfig,
    pub learner: LearnerConfig,
    pub filters: usize,
    pub scheme: Scheme,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub abs: AbsConfig,
    pub ddpg: DdpgConfig,
}

impl RunSpec {
    /// Spec with every default and the given scheme.
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            learner: LearnerConfig::default(),
            filters: DEFAULT_FILTERS,
            scheme,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            abs: AbsConfig::default(),
            ddpg: DdpgConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.learner.validate()?;
        self.ddpg.validate()?;
        if self.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        if self.filters == 0 {
            return Err(crate::Error::InvalidConfig("filters must be at least 1".into()).into());
        }
        Ok(())
    }

    /// Renders the spec in the configuration file format; parsing the result
    /// gives back an equal spec.
    pub fn to_config_string(&self) -> String {
        let s = &self.scenario;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scheme", self.scheme.to_string());
        kv("grid_side", s.grid_side.to_string());
        kv("num_users", s.num_users.to_string());
        kv("max_power_dbm", format!("{:?}", s.max_power_dbm));
        kv("bandwidth_hz", format!("{:?}", s.system_bandwidth_hz));
        kv("frame_len", s.frame_len.to_string());
        kv("delta_p", format!("{:?}", s.delta_p));
        kv("p0_w", format!("{:?}", s.p0_w));
        kv("noise_figure_db", format!("{:?}", s.noise_figure_db));
        kv("rate_req_bps", format!("{:?}", s.rate_req_bps));
        kv("seeds", seeds.join(","));
        kv("lr", format!("{:?}", self.learner.lr));
        kv("gamma", format!("{:?}", self.learner.gamma));
        kv("filters", self.filters.to_string());
        kv("max_iters", self.learner.max_iters.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        out
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `scheme`")]
    MissingScheme,
    #[error("`seeds` must list at least one seed")]
    NoSeeds,
    #[error(transparent)]
    Invalid(#[from] crate::Error),
}

const KEYS: &[&str] = &[
    "grid_side",
    "num_users",
    "max_power_dbm",
    "bandwidth_hz",
    "frame_len",
    "delta_p",
    "p0_w",
    "noise_figure_db",
    "rate_req_bps",
    "scheme",
    "seeds",
    "lr",
    "gamma",
    "filters",
    "max_iters",
    "output_dir",
];

pub fn parse_config(path: &Path) -> Result<RunSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_config_str(&text)
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        line,
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

pub fn parse_config_str(text: &str) -> Result<RunSpec, ConfigError> {
    let mut spec = RunSpec::with_scheme(Scheme::MaxPower);
    let mut scheme = None;
    let mut seen: Vec<&str> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(ConfigError::Syntax { line })?;
        let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_owned(),
            });
        };
        if seen.contains(&known) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_owned(),
            });
        }
        seen.push(known);

        let s = &mut spec.scenario;
        match known {
            "grid_side" => s.grid_side = parse_value(line, key, value)?,
            "num_users" => s.num_users = parse_value(line, key, value)?,
            "max_power_dbm" => s.max_power_dbm = parse_value(line, key, value)?,
            "bandwidth_hz" => s.system_bandwidth_hz = parse_value(line, key, value)?,
            "frame_len" => s.frame_len = parse_value(line, key, value)?,
            "delta_p" => s.delta_p = parse_value(line, key, value)?,
            "p0_w" => s.p0_w = parse_value(line, key, value)?,
            "noise_figure_db" => s.noise_figure_db = parse_value(line, key, value)?,
            "rate_req_bps" => s.rate_req_bps = parse_value(line, key, value)?,
            "scheme" => scheme = Some(parse_value::<Scheme>(line, key, value)?),
            "seeds" => {
                spec.seeds = value
                    .split(',')
                    .map(|v| parse_value::<u64>(line, key, v.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "lr" => spec.learner.lr = parse_value(line, key, value)?,
            "gamma" => {
                let g: f64 = parse_value(line, key, value)?;
                spec.learner.gamma = g;
                spec.ddpg.gamma = g;
            }
            "filters" => {
                spec.filters = parse_value(line, key, value)?;
                spec.ddpg.filters = spec.filters;
            }
            "max_iters" => {
                spec.learner.max_iters = parse_value(line, key, value)?;
                spec.ddpg.max_iters = spec.learner.max_iters;
            }
            "output_dir" => {
                if value.is_empty() {
                    return Err(ConfigError::InvalidValue {
                        line,
                        key: key.to_owned(),
                        value: value.to_owned(),
                        reason: "empty path".into(),
                    });
                }
                spec.output_dir = PathBuf::from(value);
            }
            _ => unreachable!("key list and match arms agree"),
        }
    }

    spec.scheme = scheme.ok_or(ConfigError::MissingScheme)?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_only_gives_defaults() {
        let spec = parse_config_str("scheme = maxpower\n").unwrap();
        let mut expect = RunSpec::with_scheme(Scheme::MaxPower);
        expect.seeds = vec![0];
        assert_eq!(spec, expect);
        assert_eq!(spec.scenario.system_bandwidth_hz, 1e7);
        assert_eq!(spec.scenario.max_power_dbm, 30.0);
        assert_eq!(spec.scenario.sbs_spacing_m, 50.0);
        assert_eq!(spec.learner.lr, 0.1);
        assert_eq!(spec.learner.gamma, 0.5);
    }

    #[test]
    fn values_and_comments() {
        let spec = parse_config_str(
            "# demo\nscheme = dpt  # learner\nlr = 0.1\nseeds = 1, 2,3\ngrid_side=2\n\nnum_users = 20\n",
        )
        .unwrap();
        assert_eq!(spec.learner.lr, 0.1);
        assert_eq!(spec.seeds, vec![1, 2, 3]);
        assert_eq!(spec.scheme, Scheme::Dpt);
        assert_eq!(spec.scenario.num_sbs(), 4);
    }

    #[test]
    fn error_taxonomy() {
        match parse_config_str("scheme = dpt\nfoo = 1\n") {
            Err(ConfigError::UnknownKey { line: 2, key }) => assert_eq!(key, "foo"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config_str("scheme = dpt\nlr = fast\n"),
            Err(ConfigError::InvalidValue { line: 2, .. })
        ));
        assert!(matches!(parse_config_str("lr = 0.1\n"), Err(ConfigError::MissingScheme)));
        assert!(matches!(
            parse_config_str("scheme = dpt\njust words\n"),
            Err(ConfigError::Syntax { line: 2 })
        ));
        assert!(matches!(
            parse_config_str("scheme = sgd\n"),
            Err(ConfigError::InvalidValue { line: 1, .. })
        ));
        assert!(matches!(
            parse_config_str("scheme = dpt\nnum_users = 0\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config_str("scheme = dpt\nlr = 0.1\nlr = 0.2\n"),
            Err(ConfigError::DuplicateKey { line: 3, .. })
        ));
    }

    #[test]
    fn rendering_round_trips() {
        let spec = parse_config_str(
            "scheme = ddpg\ngrid_side = 3\nnum_users = 41\nmax_power_dbm = 27.5\nseeds = 4,9\nlr = 0.03\nfilters = 5\nmax_iters = 17\noutput_dir = res/x\nrate_req_bps = 123456.789\n",
        )
        .unwrap();
        assert_eq!(parse_config_str(&spec.to_config_string()).unwrap(), spec);
    }
}
