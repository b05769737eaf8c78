//! Dense row-major f64 tensors and the raw forward kernels used by the
//! autodiff graph (matrix product, same-padded convolution, elementwise maps).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dim(format!("zero-sized dimension in shape {shape:?}")));
        }
        if data.len() != n {
            return Err(Error::Dim(format!(
                "data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor { shape: vec![v.len()], data: v }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Single element of a shape-[1] tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Dim(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "add")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "sub")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

/// Elementwise product; either operand may be a shape-[1] scalar broadcast
/// over the other.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.len() == 1 && b.len() > 1 {
        return Ok(b.map(|x| x * a.data[0]));
    }
    if b.len() == 1 && a.len() > 1 {
        return Ok(a.map(|x| x * b.data[0]));
    }
    check_same_shape(a, b, "mul")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

/// Standard [m×k]·[k×n] matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Dim(format!(
            "matmul expects 2-D operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dim(format!(
            "matmul inner dimensions disagree: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a.data[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// Matrix-vector product: W [m×n] · x [n] -> [m].
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape.len() != 2 || x.shape.len() != 1 {
        return Err(Error::Dim(format!(
            "matvec expects [m×n]·[n], got {:?} and {:?}",
            w.shape, x.shape
        )));
    }
    let (m, n) = (w.shape[0], w.shape[1]);
    if n != x.shape[0] {
        return Err(Error::Dim(format!(
            "matvec inner dimensions disagree: {:?} vs {:?}",
            w.shape, x.shape
        )));
    }
    let mut out = vec![0.0; m];
    for i in 0..m {
        let row = &w.data[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * x.data[j];
        }
        out[i] = acc;
    }
    Ok(Tensor { shape: vec![m], data: out })
}

/// Same-padded 2-D cross-correlation.
///
/// input [H×W×Cin], kernel [k×k×Cin×Cout], bias [Cout] -> [H×W×Cout],
/// zero padding of (k-1)/2 on each side so the spatial size is preserved.
pub fn conv2d_same(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.shape.len() != 3 || kernel.shape.len() != 4 || bias.shape.len() != 1 {
        return Err(Error::Dim(format!(
            "conv2d_same expects input [H×W×Cin], kernel [k×k×Cin×Cout], bias [Cout]; got {:?}, {:?}, {:?}",
            input.shape, kernel.shape, bias.shape
        )));
    }
    let (h, w, cin) = (input.shape[0], input.shape[1], input.shape[2]);
    let (kh, kw, kcin, cout) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    if kh != kw {
        return Err(Error::Config(format!("conv kernel must be square, got {kh}×{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::Config(format!("conv kernel size must be odd, got {kh}")));
    }
    if kcin != cin {
        return Err(Error::Dim(format!(
            "conv input channels {cin} do not match kernel channels {kcin}"
        )));
    }
    if bias.shape[0] != cout {
        return Err(Error::Dim(format!(
            "conv bias length {} does not match output channels {cout}",
            bias.shape[0]
        )));
    }
    let pad = (kh - 1) / 2;
    let mut out = vec![0.0; h * w * cout];
    for oy in 0..h {
        for ox in 0..w {
            for oc in 0..cout {
                let mut acc = bias.data[oc];
                for ky in 0..kh {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ox as isize + kx as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = (iy as usize * w + ix as usize) * cin;
                        let kbase = ((ky * kw + kx) * cin) * cout;
                        for ic in 0..cin {
                            acc += input.data[ibase + ic] * kernel.data[kbase + ic * cout + oc];
                        }
                    }
                }
                out[(oy * w + ox) * cout + oc] = acc;
            }
        }
    }
    Ok(Tensor { shape: vec![h, w, cout], data: out })
}

/// Concatenate 1-D tensors along their (only) axis.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Argument("concat of zero tensors".into()));
    }
    for p in parts {
        if p.shape.len() != 1 {
            return Err(Error::Dim(format!(
                "concat expects 1-D tensors, got {:?}",
                p.shape
            )));
        }
    }
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::vector(data))
}

/// Split a 1-D tensor into pieces of the given lengths. Inverse of `concat`.
pub fn split(t: &Tensor, lens: &[usize]) -> Result<Vec<Tensor>> {
    if t.shape.len() != 1 {
        return Err(Error::Dim(format!("split expects a 1-D tensor, got {:?}", t.shape)));
    }
    if lens.iter().sum::<usize>() != t.len() {
        return Err(Error::Dim(format!(
            "split lengths {:?} do not sum to {}",
            lens,
            t.len()
        )));
    }
    let mut out = Vec::with_capacity(lens.len());
    let mut off = 0;
    for &l in lens {
        out.push(Tensor::vector(t.data[off..off + l].to_vec()));
        off += l;
    }
    Ok(out)
}

/// Numerically stable softmax over a 1-D tensor (max-subtraction form).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Argument("softmax of empty score vector".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input contains non-finite score".into()));
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / z).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_example() {
        // [[1,2]]·[[3],[4]] = [[11]]
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_zero() {
        let z = Tensor::zeros(vec![3, 2]);
        let b = Tensor::new(vec![2, 2], vec![5.0, -1.0, 2.0, 7.0]).unwrap();
        assert_eq!(matmul(&z, &b).unwrap(), Tensor::zeros(vec![3, 2]));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_1x1_identity() {
        let input = Tensor::new(vec![2, 2, 1], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(vec![1]);
        assert_eq!(conv2d_same(&input, &kernel, &bias).unwrap(), input);
    }

    #[test]
    fn conv_ones_kernel_counts_window() {
        // 3×3 all-ones kernel on a constant-1 5×5 single-channel input:
        // interior cells see the full 9-cell window, corners see 4.
        let input = Tensor::full(vec![5, 5, 1], 1.0);
        let kernel = Tensor::full(vec![3, 3, 1, 1], 1.0);
        let bias = Tensor::zeros(vec![1]);
        let out = conv2d_same(&input, &kernel, &bias).unwrap();
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        assert_eq!(out.data()[0], 4.0);
        assert_eq!(out.data()[4], 4.0);
        assert_eq!(out.data()[4 * 5 + 4], 4.0);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let input = Tensor::new(vec![3, 3, 2], (0..18).map(|i| i as f64).collect()).unwrap();
        let kernel = Tensor::zeros(vec![3, 3, 2, 2]);
        let bias = Tensor::vector(vec![0.25, -1.5]);
        let out = conv2d_same(&input, &kernel, &bias).unwrap();
        for cell in out.data().chunks(2) {
            assert_eq!(cell, &[0.25, -1.5]);
        }
    }

    #[test]
    fn conv_even_kernel_rejected() {
        let input = Tensor::zeros(vec![3, 3, 1]);
        let kernel = Tensor::zeros(vec![2, 2, 1, 1]);
        let bias = Tensor::zeros(vec![1]);
        assert!(matches!(
            conv2d_same(&input, &kernel, &bias),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_preserves_spatial_shape_for_odd_k() {
        for k in [1usize, 3, 5, 7] {
            let input = Tensor::full(vec![7, 7, 1], 0.5);
            let kernel = Tensor::full(vec![k, k, 1, 3], 0.1);
            let bias = Tensor::zeros(vec![3]);
            let out = conv2d_same(&input, &kernel, &bias).unwrap();
            assert_eq!(out.shape(), &[7, 7, 3]);
        }
    }

    #[test]
    fn concat_then_split_roundtrip() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0]);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
        let parts = split(&c, &[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn softmax_examples() {
        let w = softmax(&[0.0, 0.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
        let w = softmax(&[7.0, 7.0, 7.0]).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_values() {
        assert_eq!(0f64.tanh(), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
