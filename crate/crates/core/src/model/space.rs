use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::prior::{PriorSpec, LOG_DENSITY_SENTINEL};
use crate::model::Transform;

/// What a parameter block represents in the UDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    Mechanistic,
    Network,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub len: usize,
    pub role: SegmentRole,
    pub transform: Transform,
    pub prior: PriorSpec,
    /// Distribution for multistart initial values when it differs from the prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<PriorSpec>,
}

impl Segment {
    pub fn new(
        name: impl Into<String>,
        len: usize,
        role: SegmentRole,
        transform: Transform,
        prior: PriorSpec,
    ) -> Self {
        Self {
            name: name.into(),
            len,
            role,
            transform,
            prior,
            start: None,
        }
    }

    pub fn with_start(mut self, start: PriorSpec) -> Self {
        self.start = Some(start);
        self
    }
}

/// Flat parameter layout: an ordered list of named segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct ParamSpace {
    segments: Vec<Segment>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl TryFrom<Vec<Segment>> for ParamSpace {
    type Error = Error;

    fn try_from(segments: Vec<Segment>) -> Result<Self> {
        ParamSpace::new(segments)
    }
}

impl From<ParamSpace> for Vec<Segment> {
    fn from(space: ParamSpace) -> Self {
        space.segments
    }
}

impl ParamSpace {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for (i, seg) in segments.iter().enumerate() {
            if segments[..i].iter().any(|s| s.name == seg.name) {
                return Err(Error::Config(format!("duplicate segment name `{}`", seg.name)));
            }
            seg.prior.validate()?;
            if let Some(start) = &seg.start {
                start.validate()?;
            }
            offsets.push(total);
            total += seg.len;
        }
        if segments.iter().filter(|s| s.role == SegmentRole::Noise).count() > 1 {
            return Err(Error::Config("at most one noise segment is allowed".into()));
        }
        Ok(Self {
            segments,
            offsets,
            total_dim: total,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segment together with its index range in the flat vector.
    pub fn iter(&self) -> impl Iterator<Item = (&Segment, Range<usize>)> {
        self.segments
            .iter()
            .zip(&self.offsets)
            .map(|(s, &o)| (s, o..o + s.len))
    }

    pub fn find(&self, name: &str) -> Option<(&Segment, Range<usize>)> {
        self.iter().find(|(s, _)| s.name == name)
    }

    pub fn range_of(&self, name: &str) -> Result<Range<usize>> {
        self.find(name)
            .map(|(_, r)| r)
            .ok_or_else(|| Error::Config(format!("parameter space has no segment `{name}`")))
    }

    pub fn noise_segment(&self) -> Option<(&Segment, Range<usize>)> {
        self.iter().find(|(s, _)| s.role == SegmentRole::Noise)
    }

    pub fn network_range(&self) -> Option<Range<usize>> {
        self.iter()
            .find(|(s, _)| s.role == SegmentRole::Network)
            .map(|(_, r)| r)
    }

    /// Per-entry labels, `name` for scalar segments and `name[i]` otherwise.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.total_dim);
        for seg in &self.segments {
            if seg.len == 1 {
                names.push(seg.name.clone());
            } else {
                names.extend((0..seg.len).map(|i| format!("{}[{i}]", seg.name)));
            }
        }
        names
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        Error::check_len("parameter vector", self.total_dim, v.len())
    }

    pub fn to_natural(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        let mut out = vec![0.0; raw.len()];
        for (seg, range) in self.iter() {
            for i in range {
                out[i] = seg.transform.to_natural(raw[i]);
            }
        }
        Ok(out)
    }

    pub fn to_raw(&self, natural: &[f64]) -> Result<Vec<f64>> {
        self.check(natural)?;
        let mut out = vec![0.0; natural.len()];
        for (seg, range) in self.iter() {
            for i in range {
                out[i] = seg.transform.to_raw(natural[i])?;
            }
        }
        Ok(out)
    }

    /// Sum of per-segment prior log densities on the raw scale. Out-of-support
    /// values give the finite sentinel.
    pub fn log_prior(&self, raw: &[f64]) -> Result<f64> {
        self.log_prior_with_grad(raw, None)
    }

    /// As [`log_prior`](Self::log_prior), accumulating the gradient into `grad`
    /// when given. The gradient is left untouched on the sentinel path.
    pub fn log_prior_with_grad(&self, raw: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        self.check(raw)?;
        let mut total = 0.0;
        let mut local = vec![0.0; raw.len()];
        for (seg, range) in self.iter() {
            for i in range {
                match seg.prior.log_density_raw(&seg.transform, raw[i]) {
                    Some((lp, g)) => {
                        total += lp;
                        local[i] = g;
                    }
                    None => return Ok(LOG_DENSITY_SENTINEL),
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            for (gi, li) in g.iter_mut().zip(&local) {
                *gi += li;
            }
        }
        Ok(total)
    }
}
