use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CellError;

/// Operator families recognised in operator tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    Conv,
    /// Depthwise-separable convolution.
    Dconv,
    /// Two stacked convolutions, e.g. `1x7-7x1 conv`.
    SpatialSepConv,
    /// Transpose convolution.
    Tconv,
    MaxPool,
    AvgPool,
    Lstm,
    Gru,
}

impl OperatorKind {
    pub fn is_pooling(self) -> bool {
        matches!(self, OperatorKind::MaxPool | OperatorKind::AvgPool)
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, OperatorKind::Lstm | OperatorKind::Gru)
    }

    fn accepts_dilation(self) -> bool {
        matches!(self, OperatorKind::Conv | OperatorKind::Dconv)
    }
}

#[derive(Debug, PartialEq, Eq)]
struct OperatorInner {
    kind: OperatorKind,
    kernel: Vec<u32>,
    dilation: u32,
    token: String,
}

/// A parsed operator token.
///
/// Cheap to clone; equality, hashing and ordering all follow the canonical
/// token text.
#[derive(Clone)]
pub struct OperatorSpec(Arc<OperatorInner>);

static KERNEL_OP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(-?\d+)(?:x(-?\d+))?(?::(-?\d+)dr)? (conv|dconv|tconv|maxpool|avgpool)$").unwrap()
});
static SEPARABLE_OP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(-?\d+)x(-?\d+)-(-?\d+)x(-?\d+) conv$").unwrap());

fn positive(token: &str, raw: &str) -> Result<u32, CellError> {
    match raw.parse::<i64>() {
        Ok(v) if v > 0 && v <= u32::MAX as i64 => Ok(v as u32),
        _ => Err(CellError::InvalidParameter {
            token: token.to_string(),
            value: raw.to_string(),
        }),
    }
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, kernel: Vec<u32>, dilation: u32) -> Result<Self, CellError> {
        let kernel_less = matches!(kind, OperatorKind::Identity | OperatorKind::Lstm | OperatorKind::Gru);
        let bad = |what: &str| CellError::InvalidParameter {
            token: format!("{kind:?}"),
            value: what.to_string(),
        };
        if kernel_less && !kernel.is_empty() {
            return Err(bad("kernel on kernel-less operator"));
        }
        if !kernel_less {
            let expected_len_ok = match kind {
                OperatorKind::SpatialSepConv => kernel.len() == 4,
                _ => kernel.len() == 1 || kernel.len() == 2,
            };
            if !expected_len_ok {
                return Err(bad("kernel rank"));
            }
        }
        if kernel.contains(&0) {
            return Err(bad("0"));
        }
        if dilation == 0 || (dilation > 1 && !kind.accepts_dilation()) {
            return Err(bad(&dilation.to_string()));
        }
        let token = render_token(kind, &kernel, dilation);
        Ok(Self(Arc::new(OperatorInner {
            kind,
            kernel,
            dilation,
            token,
        })))
    }

    /// Parses an operator token such as `3x3 conv`, `7:4dr conv`,
    /// `1x7-7x1 conv`, `2 maxpool`, `identity` or `gru`.
    pub fn parse(token: &str) -> Result<Self, CellError> {
        let normalized = token.split_whitespace().collect::<Vec<_>>().join(" ");
        match normalized.as_str() {
            "" => return Err(CellError::UnknownOperator(token.to_string())),
            "identity" => return Self::new(OperatorKind::Identity, vec![], 1),
            "lstm" => return Self::new(OperatorKind::Lstm, vec![], 1),
            "gru" => return Self::new(OperatorKind::Gru, vec![], 1),
            _ => {}
        }
        if let Some(caps) = SEPARABLE_OP.captures(&normalized) {
            let kernel = (1..=4)
                .map(|i| positive(&normalized, &caps[i]))
                .collect::<Result<Vec<_>, _>>()?;
            return Self::new(OperatorKind::SpatialSepConv, kernel, 1);
        }
        if let Some(caps) = KERNEL_OP.captures(&normalized) {
            let mut kernel = vec![positive(&normalized, &caps[1])?];
            if let Some(second) = caps.get(2) {
                kernel.push(positive(&normalized, second.as_str())?);
            }
            let kind = match &caps[4] {
                "conv" => OperatorKind::Conv,
                "dconv" => OperatorKind::Dconv,
                "tconv" => OperatorKind::Tconv,
                "maxpool" => OperatorKind::MaxPool,
                _ => OperatorKind::AvgPool,
            };
            let dilation = match caps.get(3) {
                Some(d) => {
                    if !kind.accepts_dilation() {
                        return Err(CellError::UnknownOperator(token.to_string()));
                    }
                    positive(&normalized, d.as_str())?
                }
                None => 1,
            };
            return Self::new(kind, kernel, dilation);
        }
        Err(CellError::UnknownOperator(token.to_string()))
    }

    pub fn kind(&self) -> OperatorKind {
        self.0.kind
    }

    pub fn kernel(&self) -> &[u32] {
        &self.0.kernel
    }

    pub fn dilation(&self) -> u32 {
        self.0.dilation
    }

    pub fn token(&self) -> &str {
        &self.0.token
    }

    /// Number of weights per input/output channel pair of the (first)
    /// kernel; `1` for kernel-less operators.
    pub fn kernel_area(&self) -> u64 {
        match self.kind() {
            OperatorKind::SpatialSepConv => self.0.kernel[0] as u64 * self.0.kernel[1] as u64,
            _ => self.0.kernel.iter().map(|&k| k as u64).product(),
        }
    }

    /// Kernel area of the second convolution of a spatial-separable pair.
    pub fn second_kernel_area(&self) -> Option<u64> {
        (self.kind() == OperatorKind::SpatialSepConv)
            .then(|| self.0.kernel[2] as u64 * self.0.kernel[3] as u64)
    }
}

fn render_token(kind: OperatorKind, kernel: &[u32], dilation: u32) -> String {
    let dims = |k: &[u32]| k.iter().map(u32::to_string).collect::<Vec<_>>().join("x");
    let suffix = match kind {
        OperatorKind::Identity => return "identity".into(),
        OperatorKind::Lstm => return "lstm".into(),
        OperatorKind::Gru => return "gru".into(),
        OperatorKind::SpatialSepConv => {
            return format!("{}-{} conv", dims(&kernel[..2]), dims(&kernel[2..]));
        }
        OperatorKind::Conv => "conv",
        OperatorKind::Dconv => "dconv",
        OperatorKind::Tconv => "tconv",
        OperatorKind::MaxPool => "maxpool",
        OperatorKind::AvgPool => "avgpool",
    };
    if dilation > 1 {
        format!("{}:{}dr {}", dims(kernel), dilation, suffix)
    } else {
        format!("{} {}", dims(kernel), suffix)
    }
}

impl PartialEq for OperatorSpec {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.token == other.0.token
    }
}

impl Eq for OperatorSpec {}

impl Hash for OperatorSpec {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.token.hash(state)
    }
}

impl PartialOrd for OperatorSpec {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OperatorSpec {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.token.cmp(&other.0.token)
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}'", self.token())
    }
}

impl FromStr for OperatorSpec {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for OperatorSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for OperatorSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Parses a list of operator tokens, rejecting duplicates.
pub fn parse_operator_set<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<OperatorSpec>, CellError> {
    let mut out: Vec<OperatorSpec> = Vec::with_capacity(tokens.len());
    for t in tokens {
        let op = OperatorSpec::parse(t.as_ref())?;
        if out.contains(&op) {
            return Err(CellError::DuplicateOperator(op.token().to_string()));
        }
        out.push(op);
    }
    Ok(out)
}
