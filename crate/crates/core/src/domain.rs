//! Axis-aligned boxes in x-space and the node lattices laid over them.

use serde::{Deserialize, Serialize};

/// Axis-aligned box `{x : |x_k - center_k| <= halfwidth_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub center: Vec<f64>,
    pub halfwidths: Vec<f64>,
}

impl DomainBox {
    pub fn new(center: Vec<f64>, halfwidths: Vec<f64>) -> Self {
        assert_eq!(center.len(), halfwidths.len());
        assert!(halfwidths.iter().all(|h| *h > 0.0), "halfwidths positive");
        Self { center, halfwidths }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.center[axis] - self.halfwidths[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.center[axis] + self.halfwidths[axis]
    }

    /// Sup-norm diameter: the largest full axis width.
    pub fn diameter(&self) -> f64 {
        self.halfwidths.iter().fold(0.0, |acc, h| acc.max(2.0 * h))
    }

    /// Signed excursion of `x`: positive values measure how far outside the
    /// box the worst coordinate sits, nonpositive values mean inside.
    pub fn excursion(&self, x: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for k in 0..self.dim() {
            worst = worst.max((x[k] - self.center[k]).abs() - self.halfwidths[k]);
        }
        worst
    }

    pub fn contains(&self, x: &[f64], tolerance: f64) -> bool {
        self.excursion(x) <= tolerance
    }

    /// Concentric box scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> DomainBox {
        DomainBox::new(
            self.center.clone(),
            self.halfwidths.iter().map(|h| h * factor).collect(),
        )
    }
}

/// Regular node lattice over a box, `nodes_per_axis[k] >= 2` nodes on axis k,
/// ordered lexicographically by index tuple (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub domain: DomainBox,
    pub nodes_per_axis: Vec<usize>,
}

impl GridShape {
    pub fn new(domain: DomainBox, nodes_per_axis: Vec<usize>) -> Self {
        assert_eq!(domain.dim(), nodes_per_axis.len());
        assert!(nodes_per_axis.iter().all(|n| *n >= 2), "need >= 2 nodes per axis");
        Self {
            domain,
            nodes_per_axis,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.iter().product()
    }

    /// Cell width along `axis`.
    pub fn cell(&self, axis: usize) -> f64 {
        2.0 * self.domain.halfwidths[axis] / (self.nodes_per_axis[axis] - 1) as f64
    }

    pub fn min_cell(&self) -> f64 {
        (0..self.dim()).fold(f64::INFINITY, |acc, k| acc.min(self.cell(k)))
    }

    pub fn index_to_multi(&self, mut flat: usize) -> Vec<usize> {
        let mut multi = vec![0usize; self.dim()];
        for axis in (0..self.dim()).rev() {
            multi[axis] = flat % self.nodes_per_axis[axis];
            flat /= self.nodes_per_axis[axis];
        }
        multi
    }

    pub fn multi_to_index(&self, multi: &[usize]) -> usize {
        let mut flat = 0usize;
        for axis in 0..self.dim() {
            flat = flat * self.nodes_per_axis[axis] + multi[axis];
        }
        flat
    }

    pub fn node_coord(&self, flat: usize) -> Vec<f64> {
        let multi = self.index_to_multi(flat);
        (0..self.dim())
            .map(|axis| self.domain.lo(axis) + multi[axis] as f64 * self.cell(axis))
            .collect()
    }

    /// True when the node sits at least `margin_cells` cells away from every
    /// face of the box.
    pub fn is_interior(&self, flat: usize, margin_cells: usize) -> bool {
        let multi = self.index_to_multi(flat);
        (0..self.dim()).all(|axis| {
            multi[axis] >= margin_cells && multi[axis] + margin_cells < self.nodes_per_axis[axis]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_geometry() {
        let b = DomainBox::new(vec![0.0, 1.0], vec![0.1, 0.2]);
        assert_eq!(b.lo(0), -0.1);
        assert_eq!(b.hi(1), 1.2);
        assert_eq!(b.diameter(), 0.4);
        assert!(b.contains(&[0.1, 1.2], 0.0));
        assert!(!b.contains(&[0.1 + 1e-6, 1.0], 1e-9));
        assert!((b.excursion(&[0.15, 1.0]) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let shape = GridShape::new(
            DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            vec![3, 5],
        );
        assert_eq!(shape.node_count(), 15);
        for flat in 0..shape.node_count() {
            let multi = shape.index_to_multi(flat);
            assert_eq!(shape.multi_to_index(&multi), flat);
        }
        // Lexicographic order: last axis fastest.
        assert_eq!(shape.index_to_multi(0), vec![0, 0]);
        assert_eq!(shape.index_to_multi(1), vec![0, 1]);
        assert_eq!(shape.index_to_multi(5), vec![1, 0]);
        assert_eq!(shape.node_coord(0), vec![-1.0, -1.0]);
        assert_eq!(shape.node_coord(14), vec![1.0, 1.0]);
    }

    #[test]
    fn interior_margin() {
        let shape = GridShape::new(
            DomainBox::new(vec![0.0], vec![1.0]),
            vec![5],
        );
        let interior: Vec<usize> = (0..5).filter(|k| shape.is_interior(*k, 1)).collect();
        assert_eq!(interior, vec![1, 2, 3]);
    }
}
