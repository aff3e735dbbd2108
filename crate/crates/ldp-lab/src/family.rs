//! Builtin families written as `name{key=value, ...}`, e.g.
//! `twostate{a=1, beta=2}`, `cycle3{rate=0.5}` or plain `zero`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use geoldp::geometry::{distance, Manifold, Point, ScalarField};
use geoldp::switching::{DriftFamily, Model, RateFamily};
use nalgebra::DMatrix;

/// A parse or lookup failure at a byte offset of the family string.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for FamilyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

impl std::error::Error for FamilyError {}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, FamilyError> {
    Err(FamilyError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    /// Byte offset of each parameter's key, for diagnostics.
    offsets: BTreeMap<String, usize>,
}

impl Family {
    pub fn parse(src: &str) -> Result<Self, FamilyError> {
        let bytes = src.as_bytes();
        let mut pos = 0;
        let skip_ws = |pos: &mut usize| {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        };
        let ident = |pos: &mut usize| -> Option<String> {
            let start = *pos;
            if bytes.get(start).is_some_and(u8::is_ascii_digit) {
                return None;
            }
            while *pos < bytes.len() && (bytes[*pos].is_ascii_alphanumeric() || bytes[*pos] == b'_') {
                *pos += 1;
            }
            (*pos > start).then(|| src[start..*pos].to_string())
        };

        skip_ws(&mut pos);
        let name = match ident(&mut pos) {
            Some(n) => n,
            None => return err(pos, "expected a family name"),
        };
        let mut params = BTreeMap::new();
        let mut offsets = BTreeMap::new();
        skip_ws(&mut pos);
        if pos < bytes.len() && bytes[pos] == b'{' {
            pos += 1;
            loop {
                skip_ws(&mut pos);
                if pos < bytes.len() && bytes[pos] == b'}' {
                    pos += 1;
                    break;
                }
                let key_at = pos;
                let key = match ident(&mut pos) {
                    Some(k) => k,
                    None => return err(pos, "expected a parameter name"),
                };
                skip_ws(&mut pos);
                if pos >= bytes.len() || bytes[pos] != b'=' {
                    return err(pos, format!("expected `=` after `{key}`"));
                }
                pos += 1;
                skip_ws(&mut pos);
                let start = pos;
                while pos < bytes.len() && !matches!(bytes[pos], b',' | b'}') && !bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                let value: f64 = match src[start..pos].parse() {
                    Ok(v) => v,
                    Err(_) => return err(start, format!("`{}` is not a number", &src[start..pos])),
                };
                if !value.is_finite() {
                    return err(start, "parameter must be finite");
                }
                if params.insert(key.clone(), value).is_some() {
                    return err(key_at, format!("duplicate parameter `{key}`"));
                }
                offsets.insert(key, key_at);
                skip_ws(&mut pos);
                match bytes.get(pos) {
                    Some(b',') => pos += 1,
                    Some(b'}') => {}
                    _ => return err(pos, "expected `,` or `}`"),
                }
            }
        }
        skip_ws(&mut pos);
        if pos != bytes.len() {
            return err(pos, "unexpected trailing input");
        }
        Ok(Family { name, params, offsets })
    }

    fn get(&self, key: &str, default: Option<f64>) -> Result<f64, FamilyError> {
        match (self.params.get(key), default) {
            (Some(v), _) => Ok(*v),
            (None, Some(d)) => Ok(d),
            (None, None) => err(0, format!("`{}` needs parameter `{key}`", self.name)),
        }
    }

    /// Rejects parameters outside `allowed`.
    fn only(&self, allowed: &[&str]) -> Result<(), FamilyError> {
        for (key, at) in &self.offsets {
            if !allowed.contains(&key.as_str()) {
                return err(
                    *at,
                    format!("`{}` has no parameter `{key}` (expected one of: {})", self.name, allowed.join(", ")),
                );
            }
        }
        Ok(())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.params.is_empty() {
            let inner: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "{{{}}}", inner.join(","))?;
        }
        Ok(())
    }
}

/// Drift families: `zero`, `twostate{beta}`, `relax{k}` and `states`
/// (vectors supplied separately).
pub fn drift_family(fam: &Family, vectors: Option<&[Vec<f64>]>) -> Result<DriftFamily, FamilyError> {
    match fam.name.as_str() {
        "zero" => fam.only(&[]).map(|_| DriftFamily::Zero),
        "twostate" => {
            fam.only(&["beta"])?;
            Ok(DriftFamily::TwoState { beta: fam.get("beta", None)? })
        }
        "relax" => {
            fam.only(&["k"])?;
            Ok(DriftFamily::Relax {
                k: fam.get("k", None)?,
                offsets: vectors.map(<[_]>::to_vec).unwrap_or_default(),
            })
        }
        "states" => {
            fam.only(&[])?;
            match vectors {
                Some(v) if !v.is_empty() => Ok(DriftFamily::States(v.to_vec())),
                _ => err(0, "`states` needs the drift vectors"),
            }
        }
        other => err(0, format!("unknown drift family `{other}` (expected zero, twostate, relax, states)")),
    }
}

/// Rate families: `single`, `twostate{a, b}` (`b` defaults to `a`),
/// `twostate_spatial{a0, a1}`, `cycle3{rate}` and `matrix` (rows supplied
/// separately).
pub fn rate_family(fam: &Family, matrix: Option<&[Vec<f64>]>) -> Result<RateFamily, FamilyError> {
    match fam.name.as_str() {
        "single" => fam.only(&[]).map(|_| RateFamily::Single),
        "twostate" => {
            fam.only(&["a", "b"])?;
            let a = fam.get("a", None)?;
            Ok(RateFamily::TwoState { a, b: fam.get("b", Some(a))? })
        }
        "twostate_spatial" => {
            fam.only(&["a0", "a1"])?;
            Ok(RateFamily::TwoStateSpatial {
                a0: fam.get("a0", None)?,
                a1: fam.get("a1", None)?,
            })
        }
        "cycle3" => {
            fam.only(&["rate"])?;
            Ok(RateFamily::Cycle3 { rate: fam.get("rate", None)? })
        }
        "matrix" => {
            fam.only(&[])?;
            let rows = match matrix {
                Some(r) if !r.is_empty() => r,
                _ => return err(0, "`matrix` needs the rate matrix rows"),
            };
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return err(0, "rate matrix must be square");
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(RateFamily::Matrix(DMatrix::from_row_slice(n, n, &flat)))
        }
        other => err(
            0,
            format!("unknown rate family `{other}` (expected single, twostate, twostate_spatial, cycle3, matrix)"),
        ),
    }
}

/// Combined shorthands: `brownian` (zero drift, one state) and
/// `twostate{a, beta}` (symmetric rates `a`, drifts `+-beta e_1`).
pub fn model_family(fam: &Family) -> Result<(DriftFamily, RateFamily), FamilyError> {
    match fam.name.as_str() {
        "brownian" => fam.only(&[]).map(|_| (DriftFamily::Zero, RateFamily::Single)),
        "twostate" => {
            fam.only(&["a", "beta"])?;
            let a = fam.get("a", None)?;
            Ok((DriftFamily::TwoState { beta: fam.get("beta", None)? }, RateFamily::TwoState { a, b: a }))
        }
        other => err(0, format!("unknown model family `{other}` (expected brownian, twostate)")),
    }
}

pub fn build_model(manifold: Manifold, drift: DriftFamily, rates: RateFamily) -> geoldp::Result<Model> {
    Model::from_families(manifold, drift, rates)
}

/// Test functions `h` for resolvent runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// `c`.
    Const(f64),
    /// `amp exp(-d(y, x)^2 / width^2)` around the evaluation center.
    Gauss { amp: f64, width: f64 },
    /// `-d(y, x)^2 / 2`.
    NegQuadratic,
    /// `cos(k y_1)` in stored coordinates.
    Cos(f64),
}

pub fn builtin_field(fam: &Family) -> Result<Builtin, FamilyError> {
    match fam.name.as_str() {
        "const" => {
            fam.only(&["c"])?;
            Ok(Builtin::Const(fam.get("c", Some(1.0))?))
        }
        "gauss" => {
            fam.only(&["amp", "width"])?;
            let width = fam.get("width", Some(1.0))?;
            if !(width > 0.0) {
                return err(0, "gauss width must be positive");
            }
            Ok(Builtin::Gauss {
                amp: fam.get("amp", Some(1.0))?,
                width,
            })
        }
        "neg_quadratic" => fam.only(&[]).map(|_| Builtin::NegQuadratic),
        "cos" => {
            fam.only(&["k"])?;
            Ok(Builtin::Cos(fam.get("k", Some(PI / 2.0))?))
        }
        other => err(0, format!("unknown test function `{other}` (expected const, gauss, neg_quadratic, cos)")),
    }
}

impl Builtin {
    /// Instantiates the function around `center`.
    pub fn field(&self, center: Point) -> Arc<dyn ScalarField + Send> {
        match *self {
            Builtin::Const(c) => Arc::new(move |_: &Point| c),
            Builtin::Gauss { amp, width } => {
                Arc::new(move |y: &Point| amp * (-(distance(&center, y) / width).powi(2)).exp())
            }
            Builtin::NegQuadratic => Arc::new(move |y: &Point| -0.5 * distance(&center, y).powi(2)),
            Builtin::Cos(k) => Arc::new(move |y: &Point| (k * y.coords()[0]).cos()),
        }
    }
}
