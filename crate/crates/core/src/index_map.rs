//! Placement of the lips, expression and pose slices in the 70-wide motion
//! vector.
//!
//! The map file is line-oriented: `full_index component local_index`, with
//! `#` comments. Every full index and every component-local index must be
//! covered exactly once.

use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::motion::ComponentTag;
use crate::tensor::Mat;

pub const DEFAULT_MAP: &str = include_str!("../data/component_index_map.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentIndexMap {
    /// `(component, local index)` for every full index.
    entries: Vec<(ComponentTag, usize)>,
}

impl Default for ComponentIndexMap {
    fn default() -> Self {
        Self::parse(DEFAULT_MAP).expect("shipped index map is valid")
    }
}

impl ComponentIndexMap {
    pub fn parse(text: &str) -> Result<Self> {
        let full = ComponentTag::Full.dim();
        let mut entries: Vec<Option<(ComponentTag, usize)>> = vec![None; full];
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Malformed(format!("index map line {}: {line:?}", ln + 1));
            let [idx, comp, local] = fields[..] else { return Err(bad()) };
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let comp: ComponentTag = comp.parse().map_err(|_| bad())?;
            let local: usize = local.parse().map_err(|_| bad())?;
            if idx >= full || comp == ComponentTag::Full || local >= comp.dim() {
                return Err(bad());
            }
            if entries[idx].replace((comp, local)).is_some() {
                return Err(Error::Malformed(format!("full index {idx} mapped twice")));
            }
        }
        let entries: Vec<_> = entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.ok_or_else(|| Error::Malformed(format!("full index {i} unmapped"))))
            .collect::<Result<_>>()?;
        for tag in ComponentTag::GENERATED {
            let mut locals: Vec<usize> = entries.iter().filter(|e| e.0 == tag).map(|e| e.1).collect();
            locals.sort_unstable();
            if locals != (0..tag.dim()).collect::<Vec<_>>() {
                return Err(Error::Malformed(format!("{tag} local indices are not a permutation")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().enumerate().map(|(i, (c, l))| format!("{i} {c} {l}\n")).collect()
    }

    pub fn entry(&self, full_index: usize) -> (ComponentTag, usize) {
        self.entries[full_index]
    }

    /// Full indices of one component, ordered by local index.
    pub fn indices(&self, tag: ComponentTag) -> Vec<usize> {
        if tag == ComponentTag::Full {
            return (0..self.entries.len()).collect();
        }
        let mut v = vec![0; tag.dim()];
        for (i, (c, l)) in self.entries.iter().enumerate() {
            if *c == tag {
                v[*l] = i;
            }
        }
        v
    }

    /// Columns of a full `N × 70` matrix belonging to `tag`.
    pub fn slice(&self, full: &Mat, tag: ComponentTag) -> Result<Mat> {
        if full.cols() != ComponentTag::Full.dim() {
            return shape_err(format!("expected 70-wide motion, got {}", full.cols()));
        }
        let idx = self.indices(tag);
        Ok(Mat::from_fn(full.rows(), idx.len(), |i, j| full[(i, idx[j])]))
    }

    pub fn split(&self, full: &Mat) -> Result<(Mat, Mat, Mat)> {
        Ok((
            self.slice(full, ComponentTag::Lips)?,
            self.slice(full, ComponentTag::Expression)?,
            self.slice(full, ComponentTag::Pose)?,
        ))
    }

    pub fn assemble(&self, lips: &Mat, expr: &Mat, pose: &Mat) -> Result<Mat> {
        let n = lips.rows();
        if expr.rows() != n || pose.rows() != n {
            return shape_err(format!("component lengths differ: {n}, {}, {}", expr.rows(), pose.rows()));
        }
        for (m, tag) in [(lips, ComponentTag::Lips), (expr, ComponentTag::Expression), (pose, ComponentTag::Pose)] {
            if m.cols() != tag.dim() {
                return shape_err(format!("{tag} block has width {}, expected {}", m.cols(), tag.dim()));
            }
        }
        Ok(Mat::from_fn(n, self.entries.len(), |i, j| match self.entries[j] {
            (ComponentTag::Lips, l) => lips[(i, l)],
            (ComponentTag::Expression, l) => expr[(i, l)],
            (ComponentTag::Pose, l) => pose[(i, l)],
            (ComponentTag::Full, _) => unreachable!("validated at parse time"),
        }))
    }
}

/// Interleave the three component streams into the full layout.
pub fn assemble_components(lips: &Mat, expr: &Mat, pose: &Mat) -> Result<Mat> {
    ComponentIndexMap::default().assemble(lips, expr, pose)
}

pub fn split_components(full: &Mat) -> Result<(Mat, Mat, Mat)> {
    ComponentIndexMap::default().split(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_map_layout() {
        let m = ComponentIndexMap::default();
        assert_eq!(m.indices(ComponentTag::Pose), (64..70).collect::<Vec<_>>());
        assert_eq!(m.indices(ComponentTag::Lips).len(), 13);
        assert_eq!(ComponentIndexMap::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, c) = (Mat::randn(5, 13, &mut rng), Mat::randn(5, 51, &mut rng), Mat::randn(5, 6, &mut rng));
        let full = assemble_components(&a, &b, &c).unwrap();
        assert_eq!(split_components(&full).unwrap(), (a, b, c));
    }

    #[test]
    fn zero_lips_and_pose_leave_only_expression() {
        let expr = Mat::filled(3, 51, 1.0);
        let full = assemble_components(&Mat::zeros(3, 13), &expr, &Mat::zeros(3, 6)).unwrap();
        let m = ComponentIndexMap::default();
        for j in 0..70 {
            let nonzero = full[(0, j)] != 0.0;
            assert_eq!(nonzero, m.entry(j).0 == ComponentTag::Expression);
        }
    }

    #[test]
    fn assembly_is_a_permutation() {
        // Tag every input entry with a unique value and check each output
        // entry traces back to exactly one input entry, each used once.
        let n = 4;
        let lips = Mat::from_fn(n, 13, |i, j| (i * 1000 + j) as f64);
        let expr = Mat::from_fn(n, 51, |i, j| (i * 1000 + 100 + j) as f64);
        let pose = Mat::from_fn(n, 6, |i, j| (i * 1000 + 200 + j) as f64);
        let full = assemble_components(&lips, &expr, &pose).unwrap();
        let mut all: Vec<f64> = lips.as_slice().iter().chain(expr.as_slice()).chain(pose.as_slice()).copied().collect();
        let mut out = full.into_vec();
        all.sort_by(f64::total_cmp);
        out.sort_by(f64::total_cmp);
        assert_eq!(all, out);
    }

    #[test]
    fn rejects_bad_maps_and_lengths() {
        assert!(ComponentIndexMap::parse("0 lips 0\n").is_err());
        let dup = DEFAULT_MAP.replace("\n1 lips 1\n", "\n1 lips 0\n");
        assert!(ComponentIndexMap::parse(&dup).is_err());
        assert!(assemble_components(&Mat::zeros(3, 13), &Mat::zeros(2, 51), &Mat::zeros(3, 6)).is_err());
    }
}
