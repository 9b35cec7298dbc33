//! Structured cell-centered grids in 1D/2D: discrete Laplacian and gradient with
//! ghost-cell boundary extensions, quadrature, L^p norms, mollification, and
//! mean-oscillation (BMO-style) profiling.

use crate::error::{CrossDiffError, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Boundary handling for a field. Ghost cells reflect the interior values:
/// odd extension for `DirichletZero` (value 0 on boundary faces), even
/// extension for `NeumannZero` (zero normal difference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    DirichletZero,
    NeumannZero,
}

impl BoundaryTag {
    pub fn as_byte(self) -> u8 {
        match self {
            BoundaryTag::DirichletZero => 0,
            BoundaryTag::NeumannZero => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(BoundaryTag::DirichletZero),
            1 => Ok(BoundaryTag::NeumannZero),
            other => Err(CrossDiffError::BadDump(format!("unknown boundary tag {other}"))),
        }
    }
}

/// Uniform cell-centered grid over a box domain; dim is 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    /// Cell counts per axis; extent[1] == 1 when dim == 1.
    pub extent: [usize; 2],
    /// Cell spacing per axis.
    pub h: [f64; 2],
    /// Lower corner of the domain box.
    pub origin: [f64; 2],
}

impl Grid {
    pub fn new_1d(n: usize, x0: f64, length: f64) -> Result<Self> {
        if n < 3 {
            return Err(CrossDiffError::invalid("n", "need at least 3 cells per axis"));
        }
        if length <= 0.0 {
            return Err(CrossDiffError::invalid("length", "must be positive"));
        }
        Ok(Grid {
            dim: 1,
            extent: [n, 1],
            h: [length / n as f64, 1.0],
            origin: [x0, 0.0],
        })
    }

    pub fn new_2d(nx: usize, ny: usize, origin: [f64; 2], lengths: [f64; 2]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(CrossDiffError::invalid("n", "need at least 3 cells per axis"));
        }
        if lengths[0] <= 0.0 || lengths[1] <= 0.0 {
            return Err(CrossDiffError::invalid("length", "must be positive"));
        }
        Ok(Grid {
            dim: 2,
            extent: [nx, ny],
            h: [lengths[0] / nx as f64, lengths[1] / ny as f64],
            origin,
        })
    }

    pub fn cells(&self) -> usize {
        self.extent[0] * self.extent[1]
    }

    /// Cell volume h^N.
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }

    pub fn min_h(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0].min(self.h[1])
        }
    }

    /// Physical width of the domain along axis 0.
    pub fn width(&self) -> f64 {
        self.h[0] * self.extent[0] as f64
    }

    /// Center coordinates of cell (ix, iy); iy ignored in 1D.
    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.h[0],
            self.origin[1] + (iy as f64 + 0.5) * self.h[1],
        ]
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.extent[0] + ix
    }
}

/// An m-component field of cell-centered values with a boundary tag.
/// Data is component-blocked: component c occupies `[c*cells .. (c+1)*cells)`
/// in row-major cell order (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub m: usize,
    pub bc: BoundaryTag,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid, m: usize, bc: BoundaryTag) -> Self {
        GridField {
            grid,
            m,
            bc,
            data: vec![0.0; m * grid.cells()],
        }
    }

    pub fn constant(grid: Grid, values: &[f64], bc: BoundaryTag) -> Self {
        let mut f = GridField::zeros(grid, values.len(), bc);
        for (c, &v) in values.iter().enumerate() {
            f.comp_mut(c).fill(v);
        }
        f
    }

    /// Builds a field by evaluating `func(x, y) -> component values` at cell centers.
    pub fn from_fn<F>(grid: Grid, m: usize, bc: BoundaryTag, func: F) -> Self
    where
        F: Fn(f64, f64) -> Vec<f64>,
    {
        let mut f = GridField::zeros(grid, m, bc);
        for iy in 0..grid.extent[1] {
            for ix in 0..grid.extent[0] {
                let c = grid.center(ix, iy);
                let vals = func(c[0], c[1]);
                debug_assert_eq!(vals.len(), m);
                let cell = grid.idx(ix, iy);
                for (k, &v) in vals.iter().enumerate() {
                    f.data[k * grid.cells() + cell] = v;
                }
            }
        }
        f
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.grid.cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.cells();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Value vector at a cell.
    pub fn at(&self, cell: usize, out: &mut [f64]) {
        let n = self.grid.cells();
        for c in 0..self.m {
            out[c] = self.data[c * n + cell];
        }
    }

    pub fn set(&mut self, cell: usize, vals: &[f64]) {
        let n = self.grid.cells();
        for c in 0..self.m {
            self.data[c * n + cell] = vals[c];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// self += a * other.
    pub fn axpy(&mut self, a: f64, other: &GridField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Pointwise map through `func: u -> w` (same grid, possibly different component count).
    pub fn map_pointwise<F>(&self, m_out: usize, func: F) -> GridField
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let cells = self.grid.cells();
        let mut out = GridField::zeros(self.grid, m_out, self.bc);
        let mut buf_in = vec![0.0; self.m];
        let mut buf_out = vec![0.0; m_out];
        for cell in 0..cells {
            self.at(cell, &mut buf_in);
            func(&buf_in, &mut buf_out);
            for c in 0..m_out {
                out.data[c * cells + cell] = buf_out[c];
            }
        }
        out
    }
}

/// Reflected index for ghost access: odd/even extension about the boundary faces.
/// Returns (index, sign).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize, bc: BoundaryTag) -> (usize, f64) {
    let n = n as isize;
    let (j, s) = if i < 0 {
        (-1 - i, ghost_sign(bc))
    } else if i >= n {
        (2 * n - 1 - i, ghost_sign(bc))
    } else {
        (i, 1.0)
    };
    debug_assert!(j >= 0 && j < n, "kernel wider than the grid");
    (j as usize, s)
}

#[inline]
fn ghost_sign(bc: BoundaryTag) -> f64 {
    match bc {
        BoundaryTag::DirichletZero => -1.0,
        BoundaryTag::NeumannZero => 1.0,
    }
}

/// Second-order centered discrete Laplacian (3-point in 1D, 5-point in 2D) with
/// ghost values from the field's boundary extension.
pub fn laplacian(field: &GridField) -> GridField {
    let g = field.grid;
    let (nx, ny) = (g.extent[0], g.extent[1]);
    let inv_hx2 = 1.0 / (g.h[0] * g.h[0]);
    let inv_hy2 = 1.0 / (g.h[1] * g.h[1]);
    let mut out = GridField::zeros(g, field.m, field.bc);
    for c in 0..field.m {
        let src = field.comp(c);
        let dst = out.comp_mut(c);
        for iy in 0..ny {
            for ix in 0..nx {
                let cell = iy * nx + ix;
                let center = src[cell];
                let (il, sl) = reflect_index(ix as isize - 1, nx, field.bc);
                let (ir, sr) = reflect_index(ix as isize + 1, nx, field.bc);
                let mut acc =
                    (sl * src[iy * nx + il] - 2.0 * center + sr * src[iy * nx + ir]) * inv_hx2;
                if g.dim == 2 {
                    let (jd, sd) = reflect_index(iy as isize - 1, ny, field.bc);
                    let (ju, su) = reflect_index(iy as isize + 1, ny, field.bc);
                    acc += (sd * src[jd * nx + ix] - 2.0 * center + su * src[ju * nx + ix])
                        * inv_hy2;
                }
                dst[cell] = acc;
            }
        }
    }
    out
}

/// Centered-difference gradient; returns one field per axis, each with m components.
pub fn gradient(field: &GridField) -> Vec<GridField> {
    let g = field.grid;
    let (nx, ny) = (g.extent[0], g.extent[1]);
    let mut out = Vec::with_capacity(g.dim);
    for axis in 0..g.dim {
        let inv_2h = 1.0 / (2.0 * g.h[axis]);
        let mut d = GridField::zeros(g, field.m, field.bc);
        for c in 0..field.m {
            let src = field.comp(c);
            let dst = d.comp_mut(c);
            for iy in 0..ny {
                for ix in 0..nx {
                    let cell = iy * nx + ix;
                    let v = if axis == 0 {
                        let (il, sl) = reflect_index(ix as isize - 1, nx, field.bc);
                        let (ir, sr) = reflect_index(ix as isize + 1, nx, field.bc);
                        (sr * src[iy * nx + ir] - sl * src[iy * nx + il]) * inv_2h
                    } else {
                        let (jd, sd) = reflect_index(iy as isize - 1, ny, field.bc);
                        let (ju, su) = reflect_index(iy as isize + 1, ny, field.bc);
                        (su * src[ju * nx + ix] - sd * src[jd * nx + ix]) * inv_2h
                    };
                    dst[cell] = v;
                }
            }
        }
        out.push(d);
    }
    out
}

/// Midpoint quadrature of each component: sum of values times h^N.
pub fn integrate(field: &GridField) -> Vec<f64> {
    let vol = field.grid.cell_volume();
    (0..field.m)
        .map(|c| field.comp(c).iter().sum::<f64>() * vol)
        .collect()
}

/// Discrete inner product `integral of <F, G>`; fields must share grid and m.
pub fn inner(a: &GridField, b: &GridField) -> f64 {
    debug_assert_eq!(a.data.len(), b.data.len());
    crate::linalg::dot(&a.data, &b.data) * a.grid.cell_volume()
}

/// (integral of |field|^p)^(1/p) with the Euclidean norm across components;
/// `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(field: &GridField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(CrossDiffError::invalid("p", "exponent must be >= 1"));
    }
    let cells = field.grid.cells();
    let mut buf = vec![0.0; field.m];
    if p.is_infinite() {
        let mut best = 0.0f64;
        for cell in 0..cells {
            field.at(cell, &mut buf);
            let mag = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            best = best.max(mag);
        }
        return Ok(best);
    }
    let vol = field.grid.cell_volume();
    let mut acc = 0.0;
    for cell in 0..cells {
        field.at(cell, &mut buf);
        let mag = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        acc += mag.powf(p);
    }
    Ok((acc * vol).powf(1.0 / p))
}

pub fn l2_norm(field: &GridField) -> f64 {
    (crate::linalg::dot(&field.data, &field.data) * field.grid.cell_volume()).sqrt()
}

/// Convolution with the compactly supported bump exp(-1/(1-(r/R)^2)), sampled at
/// cell offsets and normalized so the discrete kernel mass is exactly 1. The
/// boundary is handled by the field's extension rule, so constants are fixed
/// points and the Neumann extension preserves discrete mass.
pub fn mollify(field: &GridField, radius: f64) -> Result<GridField> {
    let g = field.grid;
    let h = g.min_h();
    if radius < h {
        return Err(CrossDiffError::invalid(
            "radius",
            format!("mollification radius {radius} below grid spacing {h}"),
        ));
    }
    let qx = (radius / g.h[0]).floor() as isize;
    let qy = if g.dim == 2 { (radius / g.h[1]).floor() as isize } else { 0 };
    if qx >= g.extent[0] as isize || (g.dim == 2 && qy >= g.extent[1] as isize) {
        return Err(CrossDiffError::invalid(
            "radius",
            "mollification radius exceeds the domain half-width",
        ));
    }
    // Tabulate kernel weights on the offset stencil.
    let mut weights = Vec::new();
    let mut total = 0.0;
    for oy in -qy..=qy {
        for ox in -qx..=qx {
            let rx = ox as f64 * g.h[0] / radius;
            let ry = oy as f64 * g.h[1] / radius;
            let r2 = rx * rx + ry * ry;
            if r2 < 1.0 {
                let w = (-1.0 / (1.0 - r2)).exp();
                if w > 0.0 {
                    weights.push((ox, oy, w));
                    total += w;
                }
            }
        }
    }
    for w in &mut weights {
        w.2 /= total;
    }
    let (nx, ny) = (g.extent[0], g.extent[1]);
    let mut out = GridField::zeros(g, field.m, field.bc);
    for c in 0..field.m {
        let src = field.comp(c);
        let dst = out.comp_mut(c);
        for iy in 0..ny {
            for ix in 0..nx {
                let mut acc = 0.0;
                for &(ox, oy, w) in &weights {
                    let (jx, sx) = reflect_index(ix as isize + ox, nx, field.bc);
                    let (jy, sy) = if g.dim == 2 {
                        reflect_index(iy as isize + oy, ny, field.bc)
                    } else {
                        (0, 1.0)
                    };
                    acc += w * sx * sy * src[jy * nx + jx];
                }
                dst[iy * nx + ix] = acc;
            }
        }
    }
    Ok(out)
}

/// Mean-oscillation profile: (radius, sup over centers of the mean oscillation)
/// pairs with strictly decreasing radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillationProfile {
    pub entries: Vec<(f64, f64)>,
    pub time_index: usize,
}

impl OscillationProfile {
    pub fn at_radius(&self, r: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|(rad, _)| (rad - r).abs() <= 1e-12 * (1.0 + r.abs()))
            .map(|(_, v)| *v)
    }
}

/// L^1 mean oscillation: for each radius R, sup over the center lattice of the
/// ball-average of |field - ball-average|, over discrete balls B_R intersected
/// with the domain. Centers are cell centers whose ball holds at least 4 cells.
pub fn mean_oscillation(field: &GridField, radii: &[f64]) -> Result<OscillationProfile> {
    mean_oscillation_p(field, radii, 1.0)
}

/// p-mean oscillation variant: (ball-average of |field - avg|^p)^(1/p).
pub fn mean_oscillation_p(field: &GridField, radii: &[f64], p: f64) -> Result<OscillationProfile> {
    let g = field.grid;
    let h = g.min_h();
    let mut rs: Vec<f64> = radii.to_vec();
    for &r in &rs {
        if r < 2.0 * h {
            return Err(CrossDiffError::invalid(
                "radius",
                format!("oscillation radius {r} below 2h = {}", 2.0 * h),
            ));
        }
    }
    rs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    rs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let (nx, ny) = (g.extent[0], g.extent[1]);
    let cells = g.cells();
    let mut entries = Vec::with_capacity(rs.len());
    let mut avg = vec![0.0; field.m];
    let mut val = vec![0.0; field.m];
    for &radius in &rs {
        let qx = (radius / g.h[0]).floor() as isize;
        let qy = if g.dim == 2 { (radius / g.h[1]).floor() as isize } else { 0 };
        // Offsets inside the ball, shared by every center.
        let mut offsets = Vec::new();
        for oy in -qy..=qy {
            for ox in -qx..=qx {
                let dx = ox as f64 * g.h[0];
                let dy = oy as f64 * g.h[1];
                if dx * dx + dy * dy <= radius * radius + 1e-12 {
                    offsets.push((ox, oy));
                }
            }
        }
        let mut sup = 0.0f64;
        for iy in 0..ny {
            for ix in 0..nx {
                // Clip the ball to the domain.
                let mut members: Vec<usize> = Vec::with_capacity(offsets.len());
                for &(ox, oy) in &offsets {
                    let jx = ix as isize + ox;
                    let jy = iy as isize + oy;
                    if jx >= 0 && jx < nx as isize && jy >= 0 && jy < ny as isize {
                        members.push(jy as usize * nx + jx as usize);
                    }
                }
                if members.len() < 4 {
                    continue;
                }
                let count = members.len() as f64;
                avg.iter_mut().for_each(|a| *a = 0.0);
                for &cell in &members {
                    for c in 0..field.m {
                        avg[c] += field.data[c * cells + cell];
                    }
                }
                avg.iter_mut().for_each(|a| *a /= count);
                let mut osc = 0.0;
                for &cell in &members {
                    for c in 0..field.m {
                        val[c] = field.data[c * cells + cell] - avg[c];
                    }
                    let dev = val.iter().map(|v| v * v).sum::<f64>().sqrt();
                    osc += if p == 1.0 { dev } else { dev.powf(p) };
                }
                osc /= count;
                let osc = if p == 1.0 { osc } else { osc.powf(1.0 / p) };
                sup = sup.max(osc);
            }
        }
        entries.push((radius, sup));
    }
    Ok(OscillationProfile { entries, time_index: 0 })
}

const DUMP_MAGIC: &[u8; 4] = b"XDF1";

/// Writes the field dump: magic "XDF1", u32 N, u32 extents, u32 m, one byte
/// boundary tag, then row-major 64-bit little-endian values, component-blocked.
pub fn write_field(field: &GridField, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(16 + field.data.len() * 8);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&(field.grid.dim as u32).to_le_bytes());
    for axis in 0..field.grid.dim {
        buf.extend_from_slice(&(field.grid.extent[axis] as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(field.m as u32).to_le_bytes());
    buf.push(field.bc.as_byte());
    for v in &field.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a field dump back onto the given grid; the header must match the grid
/// geometry, and values round-trip bit-exactly.
pub fn read_field(path: &Path, grid: &Grid) -> Result<GridField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |bytes: &[u8], pos: &mut usize, n: usize| -> Result<Vec<u8>> {
        if *pos + n > bytes.len() {
            return Err(CrossDiffError::BadDump("truncated dump".into()));
        }
        let s = bytes[*pos..*pos + n].to_vec();
        *pos += n;
        Ok(s)
    };
    let magic = take(&bytes, &mut pos, 4)?;
    if magic != DUMP_MAGIC {
        return Err(CrossDiffError::BadDump("bad magic".into()));
    }
    let rd_u32 = |bytes: &[u8], pos: &mut usize| -> Result<u32> {
        let b = take(bytes, pos, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let dim = rd_u32(&bytes, &mut pos)? as usize;
    if dim != grid.dim {
        return Err(CrossDiffError::BadDump(format!(
            "dump dimension {dim} != grid dimension {}",
            grid.dim
        )));
    }
    for axis in 0..dim {
        let e = rd_u32(&bytes, &mut pos)? as usize;
        if e != grid.extent[axis] {
            return Err(CrossDiffError::BadDump(format!(
                "dump extent {e} != grid extent {} on axis {axis}",
                grid.extent[axis]
            )));
        }
    }
    let m = rd_u32(&bytes, &mut pos)? as usize;
    let tag = BoundaryTag::from_byte(take(&bytes, &mut pos, 1)?[0])?;
    let nvals = m * grid.cells();
    if bytes.len() - pos != nvals * 8 {
        return Err(CrossDiffError::BadDump("value payload size mismatch".into()));
    }
    let mut data = Vec::with_capacity(nvals);
    for k in 0..nvals {
        let off = pos + k * 8;
        let mut b8 = [0u8; 8];
        b8.copy_from_slice(&bytes[off..off + 8]);
        data.push(f64::from_le_bytes(b8));
    }
    Ok(GridField { grid: *grid, m, bc: tag, data })
}
