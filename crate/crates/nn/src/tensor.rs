use std::fmt;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: {rows}x{cols} needs {} values", rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a `1x1` matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar {:?}", self.shape());
        self.data[0]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul {:?} x {:?}", self.shape(), other.shape());
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(1.0, self.view(), other.view(), 0.0, out.view_mut());
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Mat {
        Mat::from_vec(len, self.cols, self.data[start * self.cols..(start + len) * self.cols].to_vec())
    }

    pub fn concat_rows(parts: &[&Mat]) -> Mat {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            assert_eq!(p.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&p.data);
        }
        let rows = data.len() / cols.max(1);
        Mat { rows, cols, data }
    }

    pub(crate) fn view(&self) -> View<'_> {
        View { data: &self.data, offset: 0, rows: self.rows, cols: self.cols, rs: self.cols as isize, cs: 1 }
    }

    /// Transposed view without copying.
    pub(crate) fn view_t(&self) -> View<'_> {
        View { data: &self.data, offset: 0, rows: self.cols, cols: self.rows, rs: 1, cs: self.cols as isize }
    }

    pub(crate) fn view_mut(&mut self) -> ViewMut<'_> {
        let (rows, cols) = (self.rows, self.cols);
        ViewMut { data: &mut self.data, offset: 0, rows, cols, rs: cols as isize, cs: 1 }
    }
}

/// Strided read-only window into a buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

fn check_bounds(len: usize, offset: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    assert!(rs >= 0 && cs >= 0, "negative strides unsupported");
    if rows == 0 || cols == 0 {
        return;
    }
    let last = offset + (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "strided view out of bounds ({last} >= {len})");
}

/// `c = alpha * a @ b + beta * c` over strided views.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    check_bounds(a.data.len(), a.offset, a.rows, a.cols, a.rs, a.cs);
    check_bounds(b.data.len(), b.offset, b.rows, b.cols, b.rs, b.cs);
    check_bounds(c.data.len(), c.offset, c.rows, c.cols, c.rs, c.cs);
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        // Empty inner dimension: result is beta * c.
        for i in 0..c.rows {
            for j in 0..c.cols {
                let k = c.offset + i * c.rs as usize + j * c.cs as usize;
                c.data[k] *= beta;
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above for every index the
    // kernel touches, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.offset),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs,
            c.cs,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        Mat::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
    }

    #[test]
    fn matmul_matches_naive() {
        let a = Mat::from_fn(5, 7, |i, j| (i * 7 + j) as f64 * 0.1 - 1.0);
        let b = Mat::from_fn(7, 3, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        assert!(a.matmul(&b).max_abs_diff(&naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn transposed_views() {
        let a = Mat::from_fn(4, 3, |i, j| (i as f64) - 2.0 * j as f64);
        let b = Mat::from_fn(4, 2, |i, j| (i * j) as f64 + 1.0);
        let mut out = Mat::zeros(3, 2);
        gemm(1.0, a.view_t(), b.view(), 0.0, out.view_mut());
        assert!(out.max_abs_diff(&naive(&a.transpose(), &b)) < 1e-12);
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_view_panics() {
        let a = Mat::zeros(2, 2);
        let v = View { data: a.data(), offset: 1, rows: 2, cols: 2, rs: 2, cs: 1 };
        let mut out = Mat::zeros(2, 2);
        gemm(1.0, v, a.view(), 0.0, out.view_mut());
    }
}
