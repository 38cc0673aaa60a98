//! Domain types shared by every solver: the stacked trajectory matrix, per-frame
//! observations, rigid motions, shape bases and feature support sets.
//!
//! Frames are 1-based throughout (frame 1 is the reference frame). Feature
//! indices are 0-based in memory; the command-line layer converts them to
//! 1-based when printing.

use nalgebra::{
    allocator::Allocator, DMatrix, DefaultAllocator, Dim, Dyn, Matrix3, Matrix3xX, OMatrix, Vector3,
};

use crate::error::{Error, Result};

/// Orthogonality / determinant tolerance for [`RigidMotion`].
pub const ROTATION_TOL: f64 = 1e-10;
/// Row-orthonormality tolerance for [`ShapeBasis`].
pub const BASIS_TOL: f64 = 1e-10;

/// Stacked observation matrix of `3F x m`: rows `3(i-1)..3i` hold frame `i`,
/// column `j` holds the trajectory of feature `j`.
///
/// An optional mask marks observed entries. Missing entries are stored as
/// zero in `data` and are never read by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix {
    data: DMatrix<f64>,
    frames: usize,
    mask: Option<DMatrix<bool>>,
}

impl TrajectoryMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::EmptyInput("trajectory matrix"));
        }
        if !data.nrows().is_multiple_of(3) {
            return Err(Error::DimensionMismatch(format!(
                "trajectory matrix has {} rows, not a multiple of 3",
                data.nrows()
            )));
        }
        let frames = data.nrows() / 3;
        Ok(Self {
            data,
            frames,
            mask: None,
        })
    }

    /// Builds a masked matrix. The three coordinate rows of a feature within a
    /// frame must agree in the mask.
    pub fn with_mask(data: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        let mut x = Self::new(data)?;
        if mask.shape() != x.data.shape() {
            return Err(Error::InvalidMask(format!(
                "mask shape {:?} differs from data shape {:?}",
                mask.shape(),
                x.data.shape()
            )));
        }
        for i in 0..x.frames {
            for j in 0..x.data.ncols() {
                let o = mask[(3 * i, j)];
                if mask[(3 * i + 1, j)] != o || mask[(3 * i + 2, j)] != o {
                    return Err(Error::InvalidMask(format!(
                        "feature {} in frame {} is partially observed",
                        j,
                        i + 1
                    )));
                }
                if !o {
                    for r in 0..3 {
                        x.data[(3 * i + r, j)] = 0.0;
                    }
                }
            }
        }
        x.mask = if mask.iter().all(|&b| b) {
            None
        } else {
            Some(mask)
        };
        Ok(x)
    }

    /// Interprets NaN cells as missing. A feature with any NaN coordinate in a
    /// frame is missing in that whole frame.
    pub fn from_nan_marked(data: DMatrix<f64>) -> Result<Self> {
        if !data.nrows().is_multiple_of(3) {
            return Self::new(data);
        }
        let mut mask = DMatrix::from_element(data.nrows(), data.ncols(), true);
        for i in 0..data.nrows() / 3 {
            for j in 0..data.ncols() {
                if (0..3).any(|r| data[(3 * i + r, j)].is_nan()) {
                    for r in 0..3 {
                        mask[(3 * i + r, j)] = false;
                    }
                }
            }
        }
        let x = Self::with_mask(data, mask)?;
        if x.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory matrix"));
        }
        Ok(x)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn features(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn mask(&self) -> Option<&DMatrix<bool>> {
        self.mask.as_ref()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.is_none()
    }

    /// Whether feature `feature` (0-based) is observed in frame `frame` (1-based).
    pub fn is_observed(&self, frame: usize, feature: usize) -> bool {
        match &self.mask {
            None => true,
            Some(m) => m[(3 * (frame - 1), feature)],
        }
    }

    /// Features missing in `frame` (1-based).
    pub fn missing_in_frame(&self, frame: usize) -> SupportSet {
        let idx = (0..self.features())
            .filter(|&j| !self.is_observed(frame, j))
            .collect();
        SupportSet { indices: idx }
    }

    /// Copy of the data with NaN at every missing entry.
    pub fn to_nan_marked(&self) -> DMatrix<f64> {
        let mut out = self.data.clone();
        if let Some(m) = &self.mask {
            for (v, &o) in out.iter_mut().zip(m.iter()) {
                if !o {
                    *v = f64::NAN;
                }
            }
        }
        out
    }

    /// Sub-matrix holding frames `first..=last` (1-based, inclusive).
    pub fn frame_window(&self, first: usize, last: usize) -> Result<Self> {
        if first == 0 || last > self.frames || first > last {
            return Err(Error::FrameOutOfRange {
                index: if first == 0 { 0 } else { last },
                frames: self.frames,
            });
        }
        let rows = 3 * (last - first + 1);
        let data = self.data.rows(3 * (first - 1), rows).into_owned();
        match &self.mask {
            None => Self::new(data),
            Some(m) => Self::with_mask(data, m.rows(3 * (first - 1), rows).into_owned()),
        }
    }

    /// Restricts the matrix to a subset of features.
    pub fn select_features(&self, set: &SupportSet) -> Result<Self> {
        let data = restrict_columns(&self.data, set)?;
        match &self.mask {
            None => Self::new(data),
            Some(m) => {
                set.check_bounds(m.ncols())?;
                Self::with_mask(data, m.select_columns(set.as_slice()))
            }
        }
    }
}

/// Coordinates of all features in one frame, as a `3 x m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub data: Matrix3xX<f64>,
    pub frame_index: usize,
}

impl FrameObservation {
    pub fn new(data: Matrix3xX<f64>, frame_index: usize) -> Self {
        Self { data, frame_index }
    }

    pub fn features(&self) -> usize {
        self.data.ncols()
    }

    pub fn select(&self, set: &SupportSet) -> Result<Self> {
        Ok(Self {
            data: restrict_columns(&self.data, set)?,
            frame_index: self.frame_index,
        })
    }
}

/// A rotation and translation acting as `x -> R x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    /// Validates `RᵀR = I` and `det R = +1` to within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("rigid motion"));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if orth > ROTATION_TOL {
            return Err(Error::InvalidMotion(format!(
                "RᵀR deviates from I by {orth:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidMotion(format!("det R = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Maps every column of `points`.
    pub fn apply(&self, points: &Matrix3xX<f64>) -> Matrix3xX<f64> {
        let mut out = self.rotation * points;
        for mut c in out.column_iter_mut() {
            c += self.translation;
        }
        out
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// `R` row-major followed by `T`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let r = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Self::new(r, Vector3::new(v[9], v[10], v[11]))
    }
}

/// Row-orthonormal `4 x n` representative of the rigid body's shape subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBasis {
    basis: DMatrix<f64>,
}

impl ShapeBasis {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != 4 {
            return Err(Error::DimensionMismatch(format!(
                "shape basis must have 4 rows, found {}",
                basis.nrows()
            )));
        }
        let dev = (&basis * basis.transpose() - DMatrix::<f64>::identity(4, 4)).norm();
        if !(dev <= BASIS_TOL) {
            return Err(Error::InvalidBasis(dev));
        }
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn features(&self) -> usize {
        self.basis.ncols()
    }
}

/// Strictly increasing set of 0-based feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportSet {
    indices: Vec<usize>,
}

impl SupportSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedSupport);
        }
        Ok(Self { indices })
    }

    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    /// `{0, .., n-1}`.
    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        self.indices.iter().copied()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn intersection(&self, other: &SupportSet) -> SupportSet {
        let (mut a, mut b) = (0, 0);
        let mut out = Vec::new();
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.indices[a]);
                    a += 1;
                    b += 1;
                }
            }
        }
        SupportSet { indices: out }
    }

    pub fn difference(&self, other: &SupportSet) -> SupportSet {
        SupportSet {
            indices: self.iter().filter(|&j| !other.contains(j)).collect(),
        }
    }

    /// Indices in `0..n` not in the set.
    pub fn complement(&self, n: usize) -> SupportSet {
        SupportSet {
            indices: (0..n).filter(|&j| !self.contains(j)).collect(),
        }
    }

    /// Maps positions within this set back to the underlying indices:
    /// `self.compose(local)[k] = self[local[k]]`.
    pub fn compose(&self, local: &SupportSet) -> Result<SupportSet> {
        local.check_bounds(self.len())?;
        Ok(SupportSet {
            indices: local.iter().map(|k| self.indices[k]).collect(),
        })
    }

    /// Positions of `subset`'s members within this set. Members not present are skipped.
    pub fn positions_of(&self, subset: &SupportSet) -> SupportSet {
        SupportSet {
            indices: subset
                .iter()
                .filter_map(|j| self.indices.binary_search(&j).ok())
                .collect(),
        }
    }

    /// 1-based copy, for display and serialization.
    pub fn to_one_based(&self) -> Vec<usize> {
        self.iter().map(|j| j + 1).collect()
    }

    pub(crate) fn check_bounds(&self, cols: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last >= cols => Err(Error::ColumnOutOfRange { index: last, cols }),
            _ => Ok(()),
        }
    }
}

/// Stacks per-frame observations into a `3F x m` trajectory matrix.
pub fn stack_frames(frames: &[FrameObservation]) -> Result<TrajectoryMatrix> {
    let first = frames.first().ok_or(Error::EmptyInput("frame list"))?;
    let m = first.features();
    for (i, f) in frames.iter().enumerate() {
        if f.features() != m {
            return Err(Error::FrameDimensionMismatch {
                frame: i + 1,
                expected: m,
                found: f.features(),
            });
        }
    }
    let mut data = DMatrix::zeros(3 * frames.len(), m);
    for (i, f) in frames.iter().enumerate() {
        data.rows_mut(3 * i, 3).copy_from(&f.data);
    }
    TrajectoryMatrix::new(data)
}

/// Frame `i` (1-based) of `x`. Missing entries come back as zero; consult the
/// mask via [`TrajectoryMatrix::is_observed`].
pub fn extract_frame(x: &TrajectoryMatrix, i: usize) -> Result<FrameObservation> {
    if i == 0 || i > x.frames() {
        return Err(Error::FrameOutOfRange {
            index: i,
            frames: x.frames(),
        });
    }
    let data: Matrix3xX<f64> = x.data.fixed_rows::<3>(3 * (i - 1)).into_owned();
    Ok(FrameObservation::new(data, i))
}

/// Subtracts the column mean. Returns the centered matrix and the mean.
pub fn center(w: &FrameObservation) -> Result<(Matrix3xX<f64>, Vector3<f64>)> {
    center_points(&w.data)
}

pub(crate) fn center_points(w: &Matrix3xX<f64>) -> Result<(Matrix3xX<f64>, Vector3<f64>)> {
    if w.ncols() == 0 {
        return Err(Error::EmptyInput("frame observation"));
    }
    let mean: Vector3<f64> = w.column_mean();
    let mut out = w.clone();
    for mut c in out.column_iter_mut() {
        c -= mean;
    }
    Ok((out, mean))
}

/// Columns of `m` at the indices of `set`, in order.
pub fn restrict_columns<R: Dim>(
    m: &OMatrix<f64, R, Dyn>,
    set: &SupportSet,
) -> Result<OMatrix<f64, R, Dyn>>
where
    DefaultAllocator: Allocator<R, Dyn>,
{
    set.check_bounds(m.ncols())?;
    Ok(m.select_columns(set.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(rows: &[[f64; 3]], i: usize) -> FrameObservation {
        let cols: Vec<Vector3<f64>> = rows
            .iter()
            .map(|r| Vector3::new(r[0], r[1], r[2]))
            .collect();
        FrameObservation::new(Matrix3xX::from_columns(&cols), i)
    }

    fn seq_frame(m: usize, offset: f64, i: usize) -> FrameObservation {
        FrameObservation::new(Matrix3xX::from_fn(m, |r, c| offset + (r * m + c) as f64), i)
    }

    #[test]
    fn stack_two_frames() {
        let a = seq_frame(5, 0.0, 1);
        let b = seq_frame(5, 100.0, 2);
        let x = stack_frames(&[a.clone(), b]).unwrap();
        assert_eq!(x.data().shape(), (6, 5));
        assert_eq!(x.frames(), 2);
        assert_eq!(
            x.data().rows(0, 3).into_owned(),
            DMatrix::from_iterator(3, 5, a.data.iter().copied())
        );
    }

    #[test]
    fn stack_single_frame_is_identity() {
        let a = seq_frame(4, 1.0, 1);
        let x = stack_frames(std::slice::from_ref(&a)).unwrap();
        assert_eq!(x.frames(), 1);
        assert_eq!(extract_frame(&x, 1).unwrap().data, a.data);
    }

    #[test]
    fn stack_mismatch_names_frame() {
        let err = stack_frames(&[seq_frame(3, 0.0, 1), seq_frame(4, 0.0, 2)]).unwrap_err();
        assert_eq!(
            err,
            Error::FrameDimensionMismatch {
                frame: 2,
                expected: 3,
                found: 4
            }
        );
        assert!(stack_frames(&[]).is_err());
    }

    #[test]
    fn extract_round_trip_and_bounds() {
        let a = seq_frame(5, 0.0, 1);
        let b = seq_frame(5, 7.5, 2);
        let x = stack_frames(&[a, b.clone()]).unwrap();
        assert_eq!(extract_frame(&x, 2).unwrap(), b);
        assert!(matches!(
            extract_frame(&x, 0),
            Err(Error::FrameOutOfRange { .. })
        ));
        assert!(matches!(
            extract_frame(&x, 3),
            Err(Error::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn center_constant_columns() {
        let w = frame(&[[1.0, 2.0, 3.0]; 4], 1);
        let (c, mu) = center(&w).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert_eq!(mu, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn center_symmetric_pair() {
        let w = frame(&[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 1);
        let (c, mu) = center(&w).unwrap();
        assert_eq!(c, w.data);
        assert_eq!(mu, Vector3::zeros());
        assert!(center(&FrameObservation::new(Matrix3xX::zeros(0), 1)).is_err());
    }

    #[test]
    fn restrict_examples() {
        let m = DMatrix::from_fn(2, 3, |r, c| (10 * r + c) as f64);
        assert_eq!(restrict_columns(&m, &SupportSet::all(3)).unwrap(), m);
        let one = restrict_columns(&m, &SupportSet::new(vec![2]).unwrap()).unwrap();
        assert_eq!(one, m.columns(2, 1).into_owned());
        assert!(matches!(
            restrict_columns(&m, &SupportSet::new(vec![3]).unwrap()),
            Err(Error::ColumnOutOfRange { index: 3, cols: 3 })
        ));
    }

    #[test]
    fn support_set_rejects_unsorted() {
        assert_eq!(SupportSet::new(vec![2, 1]), Err(Error::UnsortedSupport));
        assert_eq!(SupportSet::new(vec![1, 1]), Err(Error::UnsortedSupport));
        let a = SupportSet::new(vec![0, 2, 4, 6]).unwrap();
        let b = SupportSet::new(vec![2, 3, 6]).unwrap();
        assert_eq!(a.intersection(&b).as_slice(), &[2, 6]);
        assert_eq!(a.difference(&b).as_slice(), &[0, 4]);
        assert_eq!(b.complement(5).as_slice(), &[0, 1, 4]);
        assert_eq!(a.positions_of(&b).as_slice(), &[1, 3]);
    }

    #[test]
    fn nan_marks_whole_feature_missing() {
        let mut d = DMatrix::from_element(6, 3, 1.0);
        d[(4, 1)] = f64::NAN;
        let x = TrajectoryMatrix::from_nan_marked(d).unwrap();
        assert!(!x.is_observed(2, 1));
        assert!(x.is_observed(1, 1));
        assert_eq!(x.missing_in_frame(2).as_slice(), &[1]);
        assert_eq!(x.data()[(3, 1)], 0.0);
        let back = x.to_nan_marked();
        assert!(back[(3, 1)].is_nan() && back[(5, 1)].is_nan());
    }

    #[test]
    fn partial_mask_rejected() {
        let d = DMatrix::from_element(3, 2, 1.0);
        let mut mask = DMatrix::from_element(3, 2, true);
        mask[(1, 0)] = false;
        assert!(matches!(
            TrajectoryMatrix::with_mask(d, mask),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn rigid_motion_validation() {
        assert!(RigidMotion::new(Matrix3::identity(), Vector3::zeros()).is_ok());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidMotion::new(reflect, Vector3::zeros()).is_err());
        assert!(RigidMotion::new(Matrix3::identity() * 1.001, Vector3::zeros()).is_err());
        let m = RigidMotion::identity();
        assert_eq!(RigidMotion::from_row_major(&m.to_row_major()).unwrap(), m);
    }

    fn arb_frames() -> impl Strategy<Value = Vec<FrameObservation>> {
        (1usize..6, 1usize..8).prop_flat_map(|(f, m)| {
            proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3 * m), f).prop_map(
                move |frames| {
                    frames
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| FrameObservation::new(Matrix3xX::from_vec(v), i + 1))
                        .collect()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn stack_extract_inverse(frames in arb_frames()) {
            let x = stack_frames(&frames).unwrap();
            prop_assert_eq!(x.frames(), frames.len());
            for (i, f) in frames.iter().enumerate() {
                prop_assert_eq!(&extract_frame(&x, i + 1).unwrap(), f);
            }
            let again: Vec<_> = (1..=x.frames()).map(|i| extract_frame(&x, i).unwrap()).collect();
            prop_assert_eq!(stack_frames(&again).unwrap(), x);
        }

        #[test]
        fn center_sums_to_zero_and_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 3 * 50)) {
            let w = FrameObservation::new(Matrix3xX::from_vec(v), 1);
            let (c, _) = center(&w).unwrap();
            for r in 0..3 {
                prop_assert!(c.row(r).sum().abs() < 1e-10);
            }
            let (cc, mu2) = center_points(&c).unwrap();
            prop_assert!((cc - &c).amax() < 1e-12);
            prop_assert!(mu2.amax() < 1e-12);
        }

        #[test]
        fn restriction_composes(
            cols in 1usize..10,
            a in proptest::collection::btree_set(0usize..10, 0..10),
            b in proptest::collection::btree_set(0usize..10, 0..10),
        ) {
            let m = DMatrix::from_fn(3, cols, |r, c| (r * 100 + c) as f64);
            let outer = SupportSet::new(a.into_iter().filter(|&j| j < cols).collect()).unwrap();
            let inner = SupportSet::new(b.into_iter().filter(|&j| j < outer.len()).collect()).unwrap();
            let twice = restrict_columns(&restrict_columns(&m, &outer).unwrap(), &inner).unwrap();
            // brute force: walk the composed index list by hand
            let mut composed = Vec::new();
            for k in inner.iter() {
                composed.push(outer.as_slice()[k]);
            }
            let mut direct = DMatrix::zeros(3, composed.len());
            for (dst, &src) in composed.iter().enumerate() {
                direct.set_column(dst, &m.column(src));
            }
            prop_assert_eq!(&twice, &direct);
            let via_compose = outer.compose(&inner).unwrap();
            prop_assert_eq!(via_compose.as_slice(), &composed[..]);
            // relative order preserved
            prop_assert!(composed.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
