//! TOML run configuration with span-aware validation.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use freewtd_core::chain::ChainSpec;
use freewtd_core::matrix::CMatrix;
use freewtd_core::stats::DEFAULT_TOL;
use freewtd_core::wtd::DEFAULT_GRID_POINTS;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use toml::Spanned;

/// Shipped default: two-site tight-binding chain, `V = J = 1`, `gamma = 0.1`,
/// source on site 1 and drain on site L.
pub const DEFAULT_CONFIG: &str = r#"initial_state = "steady"

[model]
kind = "tight_binding"
L = 2
V = 1.0
J = 1.0

[baths]
gamma1 = 0.1
gammaL = 0.1
f1 = 1.0
fL = 0.0

[grid]
points = 400

[tolerances]
quadrature = 1e-8
oracle = 1e-8

[output]
dir = "out"
"#;

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub source_name: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source_name)?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, ":{l}:{c}")?;
        }
        if !self.field.is_empty() {
            write!(f, ": `{}`", self.field)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Steady,
    Vacuum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TightBinding,
    CustomH,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(rename = "L")]
    pub len: usize,
    #[serde(rename = "V", skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(rename = "J", skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BathConfig {
    pub gamma1: f64,
    #[serde(rename = "gammaL")]
    pub gamma_l: f64,
    pub f1: f64,
    #[serde(rename = "fL")]
    pub f_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub quadrature: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    #[serde(rename = "L")]
    pub lens: Vec<usize>,
}

/// Fully resolved configuration; every field has a concrete value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub initial_state: InitialState,
    pub model: ModelConfig,
    pub baths: BathConfig,
    pub grid: GridConfig,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Hopping matrix read from `h_file`, kept so the file is parsed once.
    #[serde(skip)]
    custom_h: Option<CMatrix>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    initial_state: Option<Spanned<InitialState>>,
    model: Option<RawModel>,
    baths: Option<RawBaths>,
    grid: Option<RawGrid>,
    tolerances: Option<RawTolerances>,
    output: Option<RawOutput>,
    sweep: Option<RawSweep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<Spanned<ModelKind>>,
    #[serde(rename = "L")]
    len: Option<Spanned<i64>>,
    #[serde(rename = "V")]
    v: Option<Spanned<f64>>,
    #[serde(rename = "J")]
    j: Option<Spanned<f64>>,
    h_file: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaths {
    gamma1: Option<Spanned<f64>>,
    #[serde(rename = "gammaL")]
    gamma_l: Option<Spanned<f64>>,
    f1: Option<Spanned<f64>>,
    #[serde(rename = "fL")]
    f_l: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_max: Option<Spanned<f64>>,
    points: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    quadrature: Option<Spanned<f64>>,
    oracle: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(rename = "L")]
    lens: Spanned<Vec<i64>>,
}

struct Ctx<'a> {
    name: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: Option<Range<usize>>, field: &str, message: impl Into<String>) -> ConfigError {
        let (line, column) = match span {
            Some(s) => {
                let (l, c) = line_col(self.text, s.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        ConfigError { source_name: self.name.to_string(), line, column, field: field.to_string(), message: message.into() }
    }

    fn finite(&self, v: &Spanned<f64>, field: &str) -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self.err(Some(v.span()), field, "must be a finite number"))
        }
    }

    fn positive(&self, v: &Spanned<f64>, field: &str) -> Result<f64, ConfigError> {
        let x = self.finite(v, field)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.err(Some(v.span()), field, format!("must be > 0, got {x}")))
        }
    }

    fn in_unit(&self, v: &Spanned<f64>, field: &str) -> Result<f64, ConfigError> {
        let x = self.finite(v, field)?;
        if (0.0..=1.0).contains(&x) {
            Ok(x)
        } else {
            Err(self.err(Some(v.span()), field, format!("must lie in [0, 1], got {x}")))
        }
    }

    fn count(&self, v: &Spanned<i64>, field: &str, min: i64) -> Result<usize, ConfigError> {
        let x = *v.get_ref();
        if x >= min {
            Ok(x as usize)
        } else {
            Err(self.err(Some(v.span()), field, format!("must be an integer >= {min}, got {x}")))
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

impl RunConfig {
    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG, "<default>", Path::new(".")).expect("shipped default config is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source_name: name.clone(),
            line: None,
            column: None,
            field: String::new(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, &name, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parse `text`; missing keys take the shipped defaults. Relative
    /// `h_file` paths resolve against `base_dir`.
    pub fn parse(text: &str, name: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let cx = Ctx { name, text };
        let raw: RawConfig = toml::from_str(text).map_err(|e| cx.err(e.span(), "", e.message().to_string()))?;

        let initial_state = raw.initial_state.map_or(InitialState::Steady, |s| s.into_inner());

        let m = raw.model.unwrap_or(RawModel { kind: None, len: None, v: None, j: None, h_file: None });
        let kind = m.kind.as_ref().map_or(ModelKind::TightBinding, |k| *k.get_ref());
        let mut len = match &m.len {
            Some(l) => cx.count(l, "model.L", 2)?,
            None => 2,
        };
        let v = m.v.as_ref().map(|x| cx.finite(x, "model.V")).transpose()?;
        let j = m.j.as_ref().map(|x| cx.finite(x, "model.J")).transpose()?;
        let (v, j, h_file, custom_h) = match kind {
            ModelKind::TightBinding => {
                if let Some(h) = &m.h_file {
                    return Err(cx.err(Some(h.span()), "model.h_file", "only valid with kind = \"custom_h\""));
                }
                (Some(v.unwrap_or(1.0)), Some(j.unwrap_or(1.0)), None, None)
            }
            ModelKind::CustomH => {
                for (opt, field) in [(&m.v, "model.V"), (&m.j, "model.J")] {
                    if let Some(x) = opt {
                        return Err(cx.err(Some(x.span()), field, "not used with kind = \"custom_h\"; put the couplings in h_file"));
                    }
                }
                let Some(hf) = &m.h_file else {
                    let span = m.kind.as_ref().map(|k| k.span());
                    return Err(cx.err(span, "model.h_file", "kind = \"custom_h\" requires h_file"));
                };
                let path = base_dir.join(hf.get_ref());
                let h = read_h_matrix(&path).map_err(|e| cx.err(Some(hf.span()), "model.h_file", e))?;
                if m.len.is_none() {
                    len = h.nrows();
                }
                if h.nrows() != len {
                    let span = m.len.as_ref().map_or(hf.span(), |l| l.span());
                    return Err(cx.err(Some(span), "model.L", format!("h_file is {}x{} but L = {len}", h.nrows(), h.nrows())));
                }
                (None, None, Some(PathBuf::from(hf.get_ref())), Some(h))
            }
        };

        let b = raw.baths.unwrap_or(RawBaths { gamma1: None, gamma_l: None, f1: None, f_l: None });
        let nonneg = |x: &Option<Spanned<f64>>, field: &str, d: f64| -> Result<f64, ConfigError> {
            match x {
                Some(s) => {
                    let v = cx.finite(s, field)?;
                    if v < 0.0 {
                        Err(cx.err(Some(s.span()), field, format!("must be >= 0, got {v}")))
                    } else {
                        Ok(v)
                    }
                }
                None => Ok(d),
            }
        };
        let unit = |x: &Option<Spanned<f64>>, field: &str, d: f64| x.as_ref().map_or(Ok(d), |s| cx.in_unit(s, field));
        let baths = BathConfig {
            gamma1: nonneg(&b.gamma1, "baths.gamma1", 0.1)?,
            gamma_l: nonneg(&b.gamma_l, "baths.gammaL", 0.1)?,
            f1: unit(&b.f1, "baths.f1", 1.0)?,
            f_l: unit(&b.f_l, "baths.fL", 0.0)?,
        };

        let g = raw.grid.unwrap_or(RawGrid { t_max: None, points: None });
        let grid = GridConfig {
            t_max: g.t_max.as_ref().map(|x| cx.positive(x, "grid.t_max")).transpose()?,
            points: g.points.as_ref().map_or(Ok(DEFAULT_GRID_POINTS), |p| cx.count(p, "grid.points", 2))?,
        };

        let t = raw.tolerances.unwrap_or(RawTolerances { quadrature: None, oracle: None });
        let tolerances = Tolerances {
            quadrature: t.quadrature.as_ref().map_or(Ok(DEFAULT_TOL), |x| cx.positive(x, "tolerances.quadrature"))?,
            oracle: t.oracle.as_ref().map_or(Ok(1e-8), |x| cx.positive(x, "tolerances.oracle"))?,
        };

        let dir = raw.output.and_then(|o| o.dir).map_or(PathBuf::from("out"), |d| PathBuf::from(d.into_inner()));

        let sweep = match raw.sweep {
            Some(s) => {
                let span = s.lens.span();
                let lens = s.lens.into_inner();
                if lens.is_empty() {
                    return Err(cx.err(Some(span), "sweep.L", "must list at least one chain length"));
                }
                if let Some(bad) = lens.iter().find(|&&l| l < 2) {
                    return Err(cx.err(Some(span), "sweep.L", format!("chain lengths must be >= 2, got {bad}")));
                }
                if kind == ModelKind::CustomH {
                    return Err(cx.err(Some(span), "sweep.L", "sweeps need kind = \"tight_binding\""));
                }
                Some(SweepConfig { lens: lens.into_iter().map(|l| l as usize).collect() })
            }
            None => None,
        };

        let cfg = RunConfig {
            initial_state,
            model: ModelConfig { kind, len, v, j, h_file },
            baths,
            grid,
            tolerances,
            output: OutputConfig { dir },
            sweep,
            custom_h,
        };
        // Surface remaining ChainSpec violations (e.g. a non-Hermitian h) against the model table.
        for l in cfg.lengths() {
            cfg.chain_spec(l).map_err(|e| cx.err(m.len.as_ref().map(|s| s.span()), "model", e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Chain lengths to run: the sweep list if present, else `model.L`.
    pub fn lengths(&self) -> Vec<usize> {
        self.sweep.as_ref().map_or_else(|| vec![self.model.len], |s| s.lens.clone())
    }

    pub fn chain_spec(&self, len: usize) -> freewtd_core::error::Result<ChainSpec> {
        let b = &self.baths;
        match &self.custom_h {
            Some(h) => ChainSpec::new(h.clone(), b.gamma1, b.gamma_l, b.f1, b.f_l),
            None => ChainSpec::tight_binding(
                len,
                self.model.v.unwrap_or(1.0),
                self.model.j.unwrap_or(1.0),
                b.gamma1,
                b.gamma_l,
                b.f1,
                b.f_l,
            ),
        }
    }

    /// Copy of this config pinned to one chain length, without the sweep.
    pub fn for_length(&self, len: usize) -> RunConfig {
        let mut c = self.clone();
        c.model.len = len;
        c.sweep = None;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }
}

/// Read an `L x L` complex matrix: one row per line, `re,im` pairs
/// separated by commas. Blank lines and lines starting with `#` are skipped.
pub fn read_h_matrix(path: &Path) -> Result<CMatrix, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut rows: Vec<Vec<C64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{}:{}: `{}`: {e}", path.display(), ln + 1, s.trim())))
            .collect::<Result<Vec<_>, _>>()?;
        if nums.len() % 2 != 0 {
            return Err(format!("{}:{}: expected re,im pairs, got {} numbers", path.display(), ln + 1, nums.len()));
        }
        rows.push(nums.chunks(2).map(|p| C64::new(p[0], p[1])).collect());
    }
    let n = rows.len();
    if n == 0 {
        return Err(format!("{}: no matrix rows", path.display()));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(format!("{}: row {} has {} entries, expected {n}", path.display(), i + 1, r.len()));
    }
    Ok(CMatrix::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}
