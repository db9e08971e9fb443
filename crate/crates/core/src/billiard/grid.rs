//! Masked five-point discretization of the Dirichlet Laplacian.

use crate::billiard::geometry::BilliardGeometry;
use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form, both triangles stored.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            out[i][j] = v;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridDiscretization {
    geometry: BilliardGeometry,
    h: f64,
    spacing: (f64, f64),
    nodes: Vec<(usize, usize)>,
    laplacian: CsrMatrix,
}

impl GridDiscretization {
    pub fn geometry(&self) -> &BilliardGeometry {
        &self.geometry
    }

    /// Requested spacing; the actual per-axis spacing is at most this.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// `(hx, hy)` after fitting the bounding box to whole cells.
    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Grid indices `(i, j)` of the interior nodes, in matrix order.
    pub fn interior_points(&self) -> &[(usize, usize)] {
        &self.nodes
    }

    /// `-Δ` on the interior nodes, scaled by `1/h²`.
    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }
}

/// Builds the five-point `-Δ` over grid nodes strictly inside the domain.
///
/// Each axis spacing is shrunk from `h` so the bounding box spans whole cells
/// and its edges lie on grid lines. Nodes sit at `(x_min + i hx, y_min + j hy)`;
/// neighbours outside the domain are dropped, which imposes `u = 0` there.
pub fn discretize(geom: &BilliardGeometry, h: f64) -> Result<GridDiscretization> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "grid spacing must be positive, got {h}"
        )));
    }
    let bb = geom.bounding_box();
    let cells_x = (bb.width() / h).ceil().max(1.0);
    let cells_y = (bb.height() / h).ceil().max(1.0);
    let (hx, hy) = (bb.width() / cells_x, bb.height() / cells_y);
    let nx = cells_x as usize + 1;
    let ny = cells_y as usize + 1;
    if nx.saturating_mul(ny) > 50_000_000 {
        return Err(Error::InvalidParameter(format!(
            "grid spacing {h} is too fine"
        )));
    }

    let mut index = vec![usize::MAX; nx * ny];
    let mut nodes = Vec::new();
    for j in 0..ny {
        let y = bb.y_min + j as f64 * hy;
        for i in 0..nx {
            let x = bb.x_min + i as f64 * hx;
            if geom.contains(x, y) {
                index[j * nx + i] = nodes.len();
                nodes.push((i, j));
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::TooCoarse {
            points: 0,
            required: 1,
        });
    }

    let (inv_hx2, inv_hy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let lookup = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            return None;
        }
        let k = index[j as usize * nx + i as usize];
        (k != usize::MAX).then_some(k)
    };

    let mut row_ptr = Vec::with_capacity(nodes.len() + 1);
    let mut col_idx = Vec::with_capacity(5 * nodes.len());
    let mut values = Vec::with_capacity(5 * nodes.len());
    row_ptr.push(0);
    for (row, &(i, j)) in nodes.iter().enumerate() {
        let (i, j) = (i as isize, j as isize);
        let mut entries = [(0usize, 0.0f64); 5];
        let mut count = 0;
        entries[count] = (row, 2.0 * inv_hx2 + 2.0 * inv_hy2);
        count += 1;
        for (di, dj, w) in [
            (-1, 0, inv_hx2),
            (1, 0, inv_hx2),
            (0, -1, inv_hy2),
            (0, 1, inv_hy2),
        ] {
            if let Some(col) = lookup(i + di, j + dj) {
                entries[count] = (col, -w);
                count += 1;
            }
        }
        let entries = &mut entries[..count];
        entries.sort_unstable_by_key(|e| e.0);
        for &(c, v) in entries.iter() {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }

    Ok(GridDiscretization {
        geometry: geom.clone(),
        h,
        spacing: (hx, hy),
        nodes,
        laplacian: CsrMatrix {
            n: row_ptr.len() - 1,
            row_ptr,
            col_idx,
            values,
        },
    })
}
