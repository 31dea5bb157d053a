//! Run-configuration files, command-line overrides, and the canonical
//! configuration digest embedded in every output artifact.
//!
//! A configuration file is plain INI-style text with two sections:
//!
//! ```text
//! # Ornstein-Uhlenbeck market, default calibration.
//! [market]
//! r = 1.0
//! a = 0.1
//! sigma = 0.2
//! rho = 0.5
//! k = 1.0
//! theta = 0.0
//! b = 0.3
//! z0 = 0.2
//! complete_market_mode = false
//!
//! [numerics]
//! dt = 0.005
//! n_paths = 200000
//! seed = 0
//! horizon_tol = 1e-4
//! parallel = true
//! antithetic = false
//! alloc_budget = 33554432
//! ```
//!
//! Every key is optional and falls back to the library defaults, but the
//! `[market]` section header itself must be present so that an empty or
//! misnamed file fails loudly instead of silently running the defaults.
//! Unknown sections, unknown keys, duplicate keys, values before the first
//! section header, and malformed numbers are all
//! [`Error::ConfigParseError`]s carrying the 1-based line number; line 0
//! flags file-level problems such as the missing section or a bad
//! command-line value.
//!
//! [`RunConfig::canonical_string`] renders the effective configuration
//! (after command-line overrides) with a fixed key order and shortest
//! round-trip number formatting, so its SHA-256 digest identifies the run
//! regardless of how the input file was formatted. Two processes given the
//! same file and flags always embed the same digest, which is what makes
//! output files comparable byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use epslog_core::{Error, MarketSpec, NumericsConfig, Result};
use sha2::{Digest, Sha256};

/// Effective run configuration: market and numerics sections plus a record
/// of which keys were set explicitly (by file or flag) rather than
/// defaulted.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Market parameters (section `[market]`).
    pub market: MarketSpec,
    /// Simulation controls (section `[numerics]`).
    pub numerics: NumericsConfig,
    /// Dotted `section.key` names that were set explicitly.
    explicit: BTreeSet<&'static str>,
}

/// Command-line overrides applied on top of the file (or the defaults when
/// no file is given). `None` / `false` leaves the corresponding key
/// untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    /// Replaces `numerics.seed`.
    pub seed: Option<u64>,
    /// Replaces `numerics.n_paths`.
    pub n_paths: Option<usize>,
    /// Replaces `numerics.dt`.
    pub dt: Option<f64>,
    /// Replaces `numerics.horizon_tol`.
    pub horizon_tol: Option<f64>,
    /// Sets `market.complete_market_mode` when true.
    pub complete_market_mode: bool,
    /// Clears `numerics.parallel` when true (single-threaded run).
    pub single_thread: bool,
}

/// Recognised keys of the `[market]` section.
const MARKET_KEYS: [&str; 9] = [
    "r",
    "a",
    "sigma",
    "rho",
    "k",
    "theta",
    "b",
    "z0",
    "complete_market_mode",
];

/// Recognised keys of the `[numerics]` section.
const NUMERICS_KEYS: [&str; 7] = [
    "dt",
    "n_paths",
    "seed",
    "horizon_tol",
    "parallel",
    "antithetic",
    "alloc_budget",
];

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::ConfigParseError {
        line,
        reason: reason.into(),
    }
}

fn parse_f64(line: usize, key: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(line, format!("value `{raw}` for `{key}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(
            line,
            format!("value `{raw}` for `{key}` must be finite"),
        ));
    }
    Ok(v)
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(
            line,
            format!("value `{raw}` for `{key}` must be `true` or `false`"),
        )),
    }
}

fn parse_unsigned<U: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<U> {
    raw.parse().map_err(|_| {
        parse_err(
            line,
            format!("value `{raw}` for `{key}` is not an unsigned integer"),
        )
    })
}

impl RunConfig {
    /// Library defaults for both sections; nothing marked explicit.
    pub fn defaults() -> Self {
        RunConfig {
            market: MarketSpec::defaults(),
            numerics: NumericsConfig::defaults(),
            explicit: BTreeSet::new(),
        }
    }

    /// Reads and parses a configuration file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_str(&text)
    }

    /// Parses configuration text. Starts from the defaults and overrides
    /// every key the text sets; see the module docs for the accepted
    /// grammar and the error taxonomy.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::defaults();
        let mut section: Option<&'static str> = None;
        let mut saw_market = false;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                    .trim();
                section = match name {
                    "market" => {
                        saw_market = true;
                        Some("market")
                    }
                    "numerics" => Some("numerics"),
                    _ => {
                        return Err(parse_err(
                            line_no,
                            format!("unknown section `[{name}]` (expected [market] or [numerics])"),
                        ))
                    }
                };
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                parse_err(line_no, format!("expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            let section = section.ok_or_else(|| {
                parse_err(
                    line_no,
                    format!("key `{key}` appears before any section header"),
                )
            })?;
            cfg.set_key(section, key, value, line_no)?;
        }

        if !saw_market {
            return Err(parse_err(0, "missing [market] section"));
        }
        Ok(cfg)
    }

    /// Sets one key, recording it as explicit; rejects unknown and
    /// duplicate keys with the offending line number.
    fn set_key(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        let canonical: &'static str = match (section, key) {
            ("market", "r") => {
                self.market.r = parse_f64(line, key, value)?;
                "market.r"
            }
            ("market", "a") => {
                self.market.a = parse_f64(line, key, value)?;
                "market.a"
            }
            ("market", "sigma") => {
                self.market.sigma = parse_f64(line, key, value)?;
                "market.sigma"
            }
            ("market", "rho") => {
                self.market.rho = parse_f64(line, key, value)?;
                "market.rho"
            }
            ("market", "k") => {
                self.market.k = parse_f64(line, key, value)?;
                "market.k"
            }
            ("market", "theta") => {
                self.market.theta = parse_f64(line, key, value)?;
                "market.theta"
            }
            ("market", "b") => {
                self.market.b = parse_f64(line, key, value)?;
                "market.b"
            }
            ("market", "z0") => {
                self.market.z0 = parse_f64(line, key, value)?;
                "market.z0"
            }
            ("market", "complete_market_mode") => {
                self.market.complete_market_mode = parse_bool(line, key, value)?;
                "market.complete_market_mode"
            }
            ("numerics", "dt") => {
                self.numerics.dt = parse_f64(line, key, value)?;
                "numerics.dt"
            }
            ("numerics", "n_paths") => {
                self.numerics.n_paths = parse_unsigned(line, key, value)?;
                "numerics.n_paths"
            }
            ("numerics", "seed") => {
                self.numerics.seed = parse_unsigned(line, key, value)?;
                "numerics.seed"
            }
            ("numerics", "horizon_tol") => {
                self.numerics.horizon_tol = parse_f64(line, key, value)?;
                "numerics.horizon_tol"
            }
            ("numerics", "parallel") => {
                self.numerics.parallel = parse_bool(line, key, value)?;
                "numerics.parallel"
            }
            ("numerics", "antithetic") => {
                self.numerics.antithetic = parse_bool(line, key, value)?;
                "numerics.antithetic"
            }
            ("numerics", "alloc_budget") => {
                self.numerics.alloc_budget = parse_unsigned(line, key, value)?;
                "numerics.alloc_budget"
            }
            _ => {
                let known: &[&str] = if section == "market" {
                    &MARKET_KEYS
                } else {
                    &NUMERICS_KEYS
                };
                return Err(parse_err(
                    line,
                    format!(
                        "unknown key `{key}` in [{section}] (known keys: {})",
                        known.join(", ")
                    ),
                ));
            }
        };
        if !self.explicit.insert(canonical) {
            return Err(parse_err(line, format!("duplicate key `{key}` in [{section}]")));
        }
        Ok(())
    }

    /// Applies command-line overrides, marking each touched key explicit.
    /// A key set both in the file and on the command line is not a
    /// duplicate: the flag wins.
    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.numerics.seed = seed;
            self.explicit.insert("numerics.seed");
        }
        if let Some(n) = o.n_paths {
            self.numerics.n_paths = n;
            self.explicit.insert("numerics.n_paths");
        }
        if let Some(dt) = o.dt {
            self.numerics.dt = dt;
            self.explicit.insert("numerics.dt");
        }
        if let Some(tol) = o.horizon_tol {
            self.numerics.horizon_tol = tol;
            self.explicit.insert("numerics.horizon_tol");
        }
        if o.complete_market_mode {
            self.market.complete_market_mode = true;
            self.explicit.insert("market.complete_market_mode");
        }
        if o.single_thread {
            self.numerics.parallel = false;
            self.explicit.insert("numerics.parallel");
        }
    }

    /// Whether a dotted `section.key` was set explicitly (file or flag)
    /// rather than defaulted. Commands use this to pick command-specific
    /// defaults without clobbering a user choice.
    pub fn was_set(&self, dotted: &str) -> bool {
        self.explicit.contains(dotted)
    }

    /// Fixed-order rendering of the effective configuration. Floats use
    /// the shortest representation that round-trips, so equal
    /// configurations render identically.
    pub fn canonical_string(&self) -> String {
        let m = &self.market;
        let n = &self.numerics;
        let mut s = String::new();
        let _ = writeln!(s, "[market]");
        let _ = writeln!(s, "r = {:?}", m.r);
        let _ = writeln!(s, "a = {:?}", m.a);
        let _ = writeln!(s, "sigma = {:?}", m.sigma);
        let _ = writeln!(s, "rho = {:?}", m.rho);
        let _ = writeln!(s, "k = {:?}", m.k);
        let _ = writeln!(s, "theta = {:?}", m.theta);
        let _ = writeln!(s, "b = {:?}", m.b);
        let _ = writeln!(s, "z0 = {:?}", m.z0);
        let _ = writeln!(s, "complete_market_mode = {}", m.complete_market_mode);
        let _ = writeln!(s, "[numerics]");
        let _ = writeln!(s, "dt = {:?}", n.dt);
        let _ = writeln!(s, "n_paths = {}", n.n_paths);
        let _ = writeln!(s, "seed = {}", n.seed);
        let _ = writeln!(s, "horizon_tol = {:?}", n.horizon_tol);
        let _ = writeln!(s, "parallel = {}", n.parallel);
        let _ = writeln!(s, "antithetic = {}", n.antithetic);
        let _ = writeln!(s, "alloc_budget = {}", n.alloc_budget);
        s
    }

    /// SHA-256 digest of [`RunConfig::canonical_string`] as lowercase hex;
    /// the run identity stamped into every output artifact.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// Parses a comma-separated position-size grid such as
/// `"0.2,0.1,0.05,0.025"`. The grid must be non-empty, strictly positive,
/// and strictly descending (largest first), matching the order in which
/// the pipeline reuses common random numbers.
pub fn parse_eps_grid(raw: &str) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(parse_err(0, format!("empty entry in eps grid `{raw}`")));
        }
        let eps: f64 = part
            .parse()
            .map_err(|_| parse_err(0, format!("eps grid entry `{part}` is not a number")))?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(parse_err(
                0,
                format!("eps grid entry `{part}` must be finite and strictly positive"),
            ));
        }
        grid.push(eps);
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(parse_err(
            0,
            format!("eps grid `{raw}` must be strictly descending"),
        ));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# comment line
[market]
r = 2.0
a = 0.15
sigma = 0.25
rho = -0.3
k = 1.5
theta = 0.1
b = 0.4
z0 = 0.05
complete_market_mode = false

[numerics]
dt = 0.01
n_paths = 1024
seed = 42
horizon_tol = 1e-3
parallel = false
antithetic = true
alloc_budget = 1000000
";

    #[test]
    fn every_key_of_a_full_file_lands_in_the_right_field() {
        let cfg = RunConfig::parse_str(FULL).expect("full file parses");
        assert_eq!(cfg.market.r, 2.0, "r");
        assert_eq!(cfg.market.a, 0.15, "a");
        assert_eq!(cfg.market.sigma, 0.25, "sigma");
        assert_eq!(cfg.market.rho, -0.3, "rho");
        assert_eq!(cfg.market.k, 1.5, "k");
        assert_eq!(cfg.market.theta, 0.1, "theta");
        assert_eq!(cfg.market.b, 0.4, "b");
        assert_eq!(cfg.market.z0, 0.05, "z0");
        assert!(!cfg.market.complete_market_mode, "complete_market_mode");
        assert_eq!(cfg.numerics.dt, 0.01, "dt");
        assert_eq!(cfg.numerics.n_paths, 1024, "n_paths");
        assert_eq!(cfg.numerics.seed, 42, "seed");
        assert_eq!(cfg.numerics.horizon_tol, 1e-3, "horizon_tol");
        assert!(!cfg.numerics.parallel, "parallel");
        assert!(cfg.numerics.antithetic, "antithetic");
        assert_eq!(cfg.numerics.alloc_budget, 1_000_000, "alloc_budget");
        assert!(cfg.was_set("numerics.antithetic"), "explicit key recorded");
        assert!(!RunConfig::defaults().was_set("numerics.antithetic"));
    }

    #[test]
    fn an_empty_market_section_keeps_the_defaults() {
        let cfg = RunConfig::parse_str("[market]\n").expect("bare section parses");
        let def = RunConfig::defaults();
        assert_eq!(cfg.market.r, def.market.r, "defaulted r");
        assert_eq!(cfg.numerics.n_paths, def.numerics.n_paths, "defaulted n_paths");
        assert_eq!(
            cfg.canonical_string(),
            def.canonical_string(),
            "canonical renderings agree"
        );
    }

    #[test]
    fn the_market_section_header_is_mandatory() {
        let err = RunConfig::parse_str("[numerics]\nseed = 3\n").unwrap_err();
        match err {
            Error::ConfigParseError { line, ref reason } => {
                assert_eq!(line, 0, "file-level error reports line 0");
                assert!(reason.contains("[market]"), "reason names the section: {reason}");
            }
            other => panic!("expected ConfigParseError, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_sections_and_malformed_lines_report_their_line() {
        for (text, want_line, want_frag) in [
            ("[market]\nq = 1\n", 2, "unknown key `q`"),
            ("[portfolio]\n", 1, "unknown section"),
            ("[market]\nr 1.0\n", 2, "key = value"),
            ("seed = 1\n[market]\n", 1, "before any section"),
            ("[market]\nr = fast\n", 2, "not a number"),
            ("[market]\nr = inf\n", 2, "finite"),
            ("[numerics]\nseed = -1\n[market]\n", 2, "unsigned"),
            ("[market]\ncomplete_market_mode = yes\n", 2, "`true` or `false`"),
            ("[market\n", 1, "unterminated"),
            ("[market]\nr = 1.0\nr = 2.0\n", 3, "duplicate key `r`"),
        ] {
            let err = RunConfig::parse_str(text).unwrap_err();
            match err {
                Error::ConfigParseError { line, ref reason } => {
                    assert_eq!(line, want_line, "line number for {text:?}");
                    assert!(
                        reason.contains(want_frag),
                        "reason {reason:?} should mention {want_frag:?}"
                    );
                }
                other => panic!("expected ConfigParseError for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn overrides_replace_values_and_mark_them_explicit() {
        let mut cfg = RunConfig::defaults();
        cfg.apply_overrides(&Overrides {
            seed: Some(9),
            n_paths: Some(77),
            dt: Some(0.5),
            horizon_tol: Some(0.01),
            complete_market_mode: true,
            single_thread: true,
        });
        assert_eq!(cfg.numerics.seed, 9);
        assert_eq!(cfg.numerics.n_paths, 77);
        assert_eq!(cfg.numerics.dt, 0.5);
        assert_eq!(cfg.numerics.horizon_tol, 0.01);
        assert!(cfg.market.complete_market_mode);
        assert!(!cfg.numerics.parallel, "single_thread clears parallel");
        assert!(cfg.was_set("numerics.parallel"));

        let mut untouched = RunConfig::defaults();
        untouched.apply_overrides(&Overrides::default());
        assert!(untouched.numerics.parallel, "empty overrides change nothing");
        assert!(!untouched.was_set("numerics.seed"));
    }

    #[test]
    fn a_flag_may_override_a_key_the_file_already_set() {
        let mut cfg = RunConfig::parse_str("[market]\n[numerics]\nseed = 5\n").unwrap();
        cfg.apply_overrides(&Overrides {
            seed: Some(11),
            ..Overrides::default()
        });
        assert_eq!(cfg.numerics.seed, 11, "flag wins over file");
    }

    #[test]
    fn the_digest_tracks_the_effective_configuration() {
        let base = RunConfig::defaults();
        let same = RunConfig::parse_str("[market]\n# nothing set\n").unwrap();
        assert_eq!(base.config_hash(), same.config_hash(), "equal configs, equal digest");
        assert_eq!(base.config_hash().len(), 64, "sha-256 hex length");

        let mut bumped = RunConfig::defaults();
        bumped.apply_overrides(&Overrides {
            seed: Some(1),
            ..Overrides::default()
        });
        assert_ne!(base.config_hash(), bumped.config_hash(), "seed change, new digest");

        let roundtrip = RunConfig::parse_str(&base.canonical_string()).unwrap();
        assert_eq!(
            roundtrip.canonical_string(),
            base.canonical_string(),
            "canonical text re-parses to itself"
        );
    }

    #[test]
    fn eps_grids_parse_and_enforce_descending_positivity() {
        assert_eq!(
            parse_eps_grid("0.2, 0.1,0.05,0.025").expect("default grid"),
            vec![0.2, 0.1, 0.05, 0.025]
        );
        assert_eq!(parse_eps_grid("0.3").expect("singleton"), vec![0.3]);
        for bad in ["", "0.1,0.2", "0.1,0.1", "0.2,-0.1", "0.2,zero", "0.2,,0.1", "inf"] {
            let err = parse_eps_grid(bad).unwrap_err();
            assert!(
                matches!(err, Error::ConfigParseError { .. }),
                "{bad:?} should be a parse error, got {err:?}"
            );
        }
    }
}
