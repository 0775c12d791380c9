//! Scan patterns and the patch selectors `P_j` / `P_jᵀ`.

use std::ops::AddAssign;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, Stream};
use crate::{ComplexImage, Error, RealImage, Result};

/// Ordered list of square patch placements inside an image.
///
/// The position index is the agent index `j` everywhere else in the crate.
/// Patterns produced by [`generate_scan_pattern`] also remember the grid cell
/// each position was generated from, which defines adjacency for overlap
/// ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScanPatternRepr", into = "ScanPatternRepr")]
pub struct ScanPattern {
    image_shape: (usize, usize),
    patch_size: usize,
    positions: Vec<(usize, usize)>,
    grid_cells: Option<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct ScanPatternRepr {
    image_shape: (usize, usize),
    patch_size: usize,
    positions: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_cells: Option<Vec<(usize, usize)>>,
}

impl TryFrom<ScanPatternRepr> for ScanPattern {
    type Error = Error;

    fn try_from(r: ScanPatternRepr) -> Result<Self> {
        let scan = ScanPattern::new(r.image_shape, r.patch_size, r.positions)?;
        match r.grid_cells {
            Some(cells) => scan.with_grid_cells(cells),
            None => Ok(scan),
        }
    }
}

impl From<ScanPattern> for ScanPatternRepr {
    fn from(s: ScanPattern) -> Self {
        ScanPatternRepr {
            image_shape: s.image_shape,
            patch_size: s.patch_size,
            positions: s.positions,
            grid_cells: s.grid_cells,
        }
    }
}

impl ScanPattern {
    /// Validates that there is at least one position and that every patch
    /// lies inside the image.
    pub fn new(
        image_shape: (usize, usize),
        patch_size: usize,
        positions: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if patch_size == 0 || image_shape.0 == 0 || image_shape.1 == 0 {
            return Err(Error::InvalidParameter(
                "image and patch dimensions must be positive".into(),
            ));
        }
        if positions.is_empty() {
            return Err(Error::InvalidParameter(
                "scan pattern has no positions".into(),
            ));
        }
        for (j, &(r, c)) in positions.iter().enumerate() {
            if r + patch_size > image_shape.0 || c + patch_size > image_shape.1 {
                return Err(Error::InvalidParameter(format!(
                    "patch {j} at ({r}, {c}) with size {patch_size} exceeds image {image_shape:?}"
                )));
            }
        }
        Ok(Self {
            image_shape,
            patch_size,
            positions,
            grid_cells: None,
        })
    }

    /// Attaches the generating grid cell of every position.
    pub fn with_grid_cells(mut self, cells: Vec<(usize, usize)>) -> Result<Self> {
        if cells.len() != self.positions.len() {
            return Err(Error::LengthMismatch {
                expected: self.positions.len(),
                found: cells.len(),
            });
        }
        let mut sorted = cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != cells.len() {
            return Err(Error::InvalidParameter("duplicate grid cells".into()));
        }
        self.grid_cells = Some(cells);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        (self.patch_size, self.patch_size)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn grid_cells(&self) -> Option<&[(usize, usize)]> {
        self.grid_cells.as_deref()
    }

    pub fn position(&self, j: usize) -> Result<(usize, usize)> {
        self.positions
            .get(j)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                index: j,
                len: self.len(),
            })
    }

    /// `P_j x`: the patch of `x` at position `j`.
    pub fn extract_patch(&self, x: &ComplexImage, j: usize) -> Result<ComplexImage> {
        self.check_image(x.dim())?;
        let (r, c) = self.position(j)?;
        let n = self.patch_size;
        Ok(x.slice(s![r..r + n, c..c + n]).to_owned())
    }

    /// `P_jᵀ v`: an image that is zero except for the block at position `j`.
    pub fn embed_patch(&self, v: &ComplexImage, j: usize) -> Result<ComplexImage> {
        let mut out = Array2::zeros(self.image_shape);
        self.add_embedded(&mut out, v.view(), j)?;
        Ok(out)
    }

    /// `acc += P_jᵀ v`.
    pub fn add_embedded<T>(&self, acc: &mut Array2<T>, v: ArrayView2<T>, j: usize) -> Result<()>
    where
        T: Copy + AddAssign,
    {
        self.check_image(acc.dim())?;
        self.check_patch(v.dim())?;
        let (r, c) = self.position(j)?;
        let n = self.patch_size;
        acc.slice_mut(s![r..r + n, c..c + n])
            .zip_mut_with(&v, |a, &b| *a += b);
        Ok(())
    }

    /// `Σ_j P_jᵀ w` for a real patch-sized map `w`, accumulated in ascending `j`.
    pub fn embedding_sum(&self, w: &RealImage) -> Result<RealImage> {
        self.check_patch(w.dim())?;
        let mut acc = Array2::zeros(self.image_shape);
        for j in 0..self.len() {
            self.add_embedded(&mut acc, w.view(), j)?;
        }
        Ok(acc)
    }

    /// `Λ₀ = Σ_j P_jᵀ P_j` as a per-pixel coverage count.
    pub fn coverage(&self) -> RealImage {
        let ones = Array2::from_elem(self.patch_shape(), 1.0);
        self.embedding_sum(&ones).expect("patch-shaped weights")
    }

    /// Pairs of positions whose generating grid cells are horizontal or
    /// vertical neighbors, each unordered pair once, in ascending order.
    pub fn adjacent_pairs(&self) -> Result<Vec<(usize, usize)>> {
        let cells = self.grid_cells.as_ref().ok_or(Error::NoAdjacentPairs)?;
        let index: std::collections::HashMap<(usize, usize), usize> =
            cells.iter().enumerate().map(|(j, &c)| (c, j)).collect();
        let mut pairs = Vec::new();
        for (j, &(gr, gc)) in cells.iter().enumerate() {
            for neighbor in [(gr, gc + 1), (gr + 1, gc)] {
                if let Some(&k) = index.get(&neighbor) {
                    pairs.push((j.min(k), j.max(k)));
                }
            }
        }
        pairs.sort_unstable();
        if pairs.is_empty() {
            return Err(Error::NoAdjacentPairs);
        }
        Ok(pairs)
    }

    /// Same placements relabeled so that new index `i` is old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: perm.len(),
            });
        }
        let mut seen = vec![false; self.len()];
        for &p in perm {
            if p >= self.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter("not a permutation".into()));
            }
        }
        Ok(Self {
            image_shape: self.image_shape,
            patch_size: self.patch_size,
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            grid_cells: self
                .grid_cells
                .as_ref()
                .map(|g| perm.iter().map(|&p| g[p]).collect()),
        })
    }

    /// Binary mask of pixels covered by at least one patch.
    pub fn support(&self) -> Array2<bool> {
        self.coverage().mapv(|c| c > 0.0)
    }

    pub(crate) fn check_image(&self, dim: (usize, usize)) -> Result<()> {
        if dim != self.image_shape {
            return Err(Error::ShapeMismatch {
                expected: self.image_shape,
                found: dim,
            });
        }
        Ok(())
    }

    pub(crate) fn check_patch(&self, dim: (usize, usize)) -> Result<()> {
        if dim != self.patch_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.patch_shape(),
                found: dim,
            });
        }
        Ok(())
    }
}

/// Rectangular grid with nominal `spacing`, centered in the image, each
/// position perturbed by independent uniform integer offsets in
/// `[-jitter, jitter]` per axis and clamped back inside the image.
pub fn generate_scan_pattern(
    image_shape: (usize, usize),
    patch_size: usize,
    spacing: usize,
    jitter: usize,
    seed: u64,
) -> Result<ScanPattern> {
    if spacing == 0 {
        return Err(Error::InfeasibleGrid("spacing must be positive".into()));
    }
    if patch_size == 0 || patch_size > image_shape.0 || patch_size > image_shape.1 {
        return Err(Error::InfeasibleGrid(format!(
            "patch size {patch_size} does not fit image {image_shape:?}"
        )));
    }
    let axis = |len: usize| {
        let room = len - patch_size;
        let count = room / spacing + 1;
        let offset = (room - (count - 1) * spacing) / 2;
        (count, offset, room)
    };
    let (rows, row_offset, row_room) = axis(image_shape.0);
    let (cols, col_offset, col_room) = axis(image_shape.1);

    let mut rng = substream(seed, Stream::Pattern, 0);
    let jitter = jitter as i64;
    let mut perturb = |nominal: usize, room: usize| -> usize {
        let delta = if jitter > 0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0
        };
        (nominal as i64 + delta).clamp(0, room as i64) as usize
    };

    let mut positions = Vec::with_capacity(rows * cols);
    let mut cells = Vec::with_capacity(rows * cols);
    for gr in 0..rows {
        for gc in 0..cols {
            let r = perturb(row_offset + gr * spacing, row_room);
            let c = perturb(col_offset + gc * spacing, col_room);
            positions.push((r, c));
            cells.push((gr, gc));
        }
    }
    ScanPattern::new(image_shape, patch_size, positions)?.with_grid_cells(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn ramp(n: usize) -> ComplexImage {
        Array2::from_shape_fn((n, n), |(i, j)| C64::new((i * n + j) as f64, -(j as f64)))
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let scan = ScanPattern::new((5, 6), 3, vec![(1, 2)]).unwrap();
        let x = Array2::from_elem((5, 6), C64::new(2.0, -1.0));
        let p = scan.extract_patch(&x, 0).unwrap();
        assert!(p.iter().all(|&z| z == C64::new(2.0, -1.0)));
    }

    #[test]
    fn ramp_middle_block() {
        let scan = ScanPattern::new((4, 4), 2, vec![(1, 1)]).unwrap();
        let p = scan.extract_patch(&ramp(4), 0).unwrap();
        let expected = [[5.0, 6.0], [9.0, 10.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(p[[i, j]].re, expected[i][j]);
            }
        }
    }

    #[test]
    fn embed_then_extract_is_identity() {
        let scan = ScanPattern::new((6, 6), 3, vec![(0, 0), (2, 3)]).unwrap();
        let v = Array2::from_shape_fn((3, 3), |(i, j)| C64::new(i as f64, j as f64 + 1.0));
        for j in 0..2 {
            let x = scan.embed_patch(&v, j).unwrap();
            assert_eq!(scan.extract_patch(&x, j).unwrap(), v);
        }
        let zero = Array2::zeros((3, 3));
        assert!(scan
            .embed_patch(&zero, 1)
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));
    }

    #[test]
    fn errors_on_bad_index_and_shape() {
        let scan = ScanPattern::new((4, 4), 2, vec![(0, 0)]).unwrap();
        assert_eq!(
            scan.extract_patch(&ramp(4), 1),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        );
        assert!(scan.embed_patch(&Array2::zeros((3, 2)), 0).is_err());
        assert!(ScanPattern::new((4, 4), 2, vec![(3, 0)]).is_err());
        assert!(ScanPattern::new((4, 4), 2, vec![]).is_err());
    }

    #[test]
    fn coverage_counts_overlaps() {
        let scan = ScanPattern::new((3, 4), 2, vec![(0, 0), (0, 1), (1, 2)]).unwrap();
        let cov = scan.coverage();
        let expected = [
            [1.0, 2.0, 1.0, 0.0],
            [1.0, 2.0, 2.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
        ];
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(cov[[i, j]], expected[i][j]);
            }
        }
    }

    #[test]
    fn exact_grid_without_jitter() {
        let scan = generate_scan_pattern((20, 20), 8, 4, 0, 1).unwrap();
        // room 12 -> 4 positions per axis at 0, 4, 8, 12
        assert_eq!(scan.len(), 16);
        assert_eq!(scan.positions()[0], (0, 0));
        assert_eq!(scan.positions()[1], (0, 4));
        assert_eq!(scan.positions()[15], (12, 12));
        // room 13 leaves 1 pixel of slack, centered with floor
        let scan = generate_scan_pattern((21, 21), 8, 4, 0, 1).unwrap();
        assert_eq!(scan.positions()[0], (0, 0));
        assert_eq!(scan.positions()[3], (0, 12));
    }

    #[test]
    fn paper_geometry_is_fully_covered() {
        let scan = generate_scan_pattern((800, 800), 256, 68, 0, 3).unwrap();
        assert_eq!(scan.len(), 81);
        assert!(scan.coverage().iter().all(|&c| c > 0.0));
        let jittered = generate_scan_pattern((800, 800), 256, 68, 5, 3).unwrap();
        let cov = jittered.coverage();
        assert!(cov.slice(s![5..795, 5..795]).iter().all(|&c| c > 0.0));
    }

    #[test]
    fn infeasible_grids_are_rejected() {
        assert!(generate_scan_pattern((10, 10), 12, 2, 0, 0).is_err());
        assert!(generate_scan_pattern((10, 10), 4, 0, 0, 0).is_err());
    }

    #[test]
    fn adjacency_from_grid_cells() {
        let scan = generate_scan_pattern((12, 12), 4, 4, 0, 0).unwrap();
        // 3x3 grid: 6 horizontal + 6 vertical pairs
        let pairs = scan.adjacent_pairs().unwrap();
        assert_eq!(pairs.len(), 12);
        assert!(pairs.contains(&(0, 1)) && pairs.contains(&(0, 3)));
        let bare = ScanPattern::new((4, 4), 2, vec![(0, 0), (2, 2)]).unwrap();
        assert_eq!(bare.adjacent_pairs(), Err(Error::NoAdjacentPairs));
    }
}
