//! Option tables, `key=value` config files and typed lookups.
//!
//! Every command option is a long flag whose name doubles as its config-file
//! key. Values resolve as flag, then config file, then default, and the fully
//! materialised map is what a manifest records and a replay consumes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

/// Bad flags, config keys or values. Maps to exit code 1.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

pub struct Opt {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
    pub switch: bool,
}

const fn opt(name: &'static str, default: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: Some(default),
        help,
        switch: false,
    }
}

const fn required(name: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: None,
        help,
        switch: false,
    }
}

const fn switch(name: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: Some("false"),
        help,
        switch: true,
    }
}

pub const SYNTH: &[Opt] = &[
    required("out", "output directory"),
    opt("students", "2000", "number of students"),
    opt("questions", "200", "number of questions"),
    opt("kcs", "20", "number of knowledge components"),
    opt("kcs-min", "1", "smallest KC set per question"),
    opt("kcs-max", "3", "largest KC set per question"),
    opt("gamma", "0.05", "ability gain per attempt of a KC"),
    opt("len-min", "20", "shortest sequence"),
    opt("len-max", "100", "longest sequence"),
    opt("ability-std", "1", "standard deviation of initial abilities"),
    opt("difficulty-std", "1", "standard deviation of question difficulties"),
    opt("seed", "0", "random seed"),
];

const MODEL_AND_TRAINING: &[Opt] = &[
    opt("d", "64", "embedding and hidden size"),
    opt("lambda", "1", "weight of the auxiliary score losses"),
    opt("lr", "1e-3", "Adam learning rate"),
    opt("batch-size", "64", "sequences per update"),
    opt("max-epochs", "200", "epoch limit"),
    opt("patience", "10", "epochs without validation gain before stopping"),
    opt("clip-norm", "5", "global gradient-norm clip, or `none`"),
    opt("folds", "5", "number of cross-validation folds"),
    opt("min-len", "3", "drop sequences shorter than this"),
    opt("max-len", "200", "split sequences longer than this"),
    opt("seed", "0", "random seed for folds, initialisation and shuffling"),
    opt("jobs", "0", "worker threads, 0 for all cores"),
];

pub fn train_opts() -> Vec<Opt> {
    let mut v = vec![
        required("data", "interaction-log CSV"),
        required("out", "output directory"),
        opt("variant", "full", "full, no_irt, no_ks, no_ps or no_ks_ps"),
        opt("fold", "all", "fold index to train, or `all`"),
        switch("grid", "pick lambda, lr and d by grid search on fold 0 first"),
        opt("grid-lambdas", "0,0.5,1,1.5,2", "grid values of lambda"),
        opt("grid-lrs", "1e-3,1e-4,1e-5", "grid values of lr"),
        opt("grid-dims", "64,256", "grid values of d"),
    ];
    v.extend(MODEL_AND_TRAINING.iter().map(copy));
    v
}

pub fn ablate_opts() -> Vec<Opt> {
    let mut v = vec![
        required("data", "interaction-log CSV"),
        required("out", "output directory"),
    ];
    v.extend(MODEL_AND_TRAINING.iter().map(copy));
    v
}

pub const EVAL: &[Opt] = &[
    required("run", "comma-separated training output directories"),
    required("out", "output directory"),
    Opt {
        name: "data",
        default: None,
        help: "interaction-log CSV (defaults to the one recorded by each run)",
        switch: false,
    },
    opt("jobs", "0", "worker threads, 0 for all cores"),
];

pub const EXPORT: &[Opt] = &[
    required("data", "interaction-log CSV"),
    required("checkpoint", "trained checkpoint"),
    required("student", "student id as written in the data"),
    required("out", "output directory"),
    Opt {
        name: "kcs",
        default: None,
        help: "comma-separated KC ids to include (default: all)",
        switch: false,
    },
];

fn copy(o: &Opt) -> Opt {
    Opt { ..*o }
}

impl Clone for Opt {
    fn clone(&self) -> Self {
        copy(self)
    }
}

pub fn command(name: &'static str, about: &'static str, opts: &[Opt]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key=value file; keys are the long flag names"),
    );
    for o in opts {
        let mut arg = Arg::new(o.name).long(o.name).help(o.help);
        if o.switch {
            arg = arg.action(ArgAction::SetTrue);
        } else {
            arg = arg.value_name("VALUE");
            if let Some(d) = o.default {
                arg = arg.help(format!("{} [default: {d}]", o.help));
            }
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Parses a `key=value` file. Blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        let key = k.trim().trim_start_matches("--").to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(invalid(format!("{}:{}: duplicate key '{key}'", path.display(), i + 1)));
        }
    }
    Ok(map)
}

/// Materialised option values of one command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved(pub BTreeMap<String, String>);

impl Resolved {
    /// Flag, then config file, then default. Unknown config keys and
    /// missing required options are errors.
    pub fn from_matches(matches: &ArgMatches, opts: &[Opt]) -> anyhow::Result<Self> {
        let file = match matches.get_one::<String>("config") {
            Some(p) => read_config_file(Path::new(p))?,
            None => BTreeMap::new(),
        };
        let mut given = BTreeMap::new();
        for o in opts {
            if o.switch {
                if matches.get_flag(o.name) {
                    given.insert(o.name.to_string(), "true".to_string());
                }
            } else if let Some(v) = matches.get_one::<String>(o.name) {
                given.insert(o.name.to_string(), v.clone());
            }
        }
        Self::merge(given, file, opts)
    }

    pub fn merge(
        given: BTreeMap<String, String>,
        file: BTreeMap<String, String>,
        opts: &[Opt],
    ) -> anyhow::Result<Self> {
        if let Some(k) = file.keys().find(|k| !opts.iter().any(|o| o.name == k.as_str())) {
            return Err(invalid(format!("unknown config key '{k}'")));
        }
        let mut map = BTreeMap::new();
        for o in opts {
            let value = given
                .get(o.name)
                .or_else(|| file.get(o.name))
                .cloned()
                .or_else(|| o.default.map(str::to_string));
            match value {
                Some(v) => {
                    map.insert(o.name.to_string(), v);
                }
                None if o.name == "data" || o.name == "kcs" => {}
                None => return Err(invalid(format!("missing required option --{}", o.name))),
            }
        }
        Ok(Self(map))
    }

    /// Re-validates a recorded map against the option table.
    pub fn from_recorded(map: &BTreeMap<String, String>, opts: &[Opt]) -> anyhow::Result<Self> {
        Self::merge(BTreeMap::new(), map.clone(), opts)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| invalid(format!("missing option --{key}")))?;
        raw.parse()
            .map_err(|_| invalid(format!("invalid value '{raw}' for --{key}")))
    }

    pub fn flag(&self, key: &str) -> anyhow::Result<bool> {
        self.get(key)
    }

    pub fn path(&self, key: &str) -> anyhow::Result<PathBuf> {
        Ok(PathBuf::from(self.get::<String>(key)?))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> anyhow::Result<Vec<T>> {
        let raw = self.raw(key).unwrap_or_default();
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| invalid(format!("invalid entry '{s}' in --{key}"))))
            .collect()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }
}
