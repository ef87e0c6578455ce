use crate::real::Real;

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![F::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[F] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [F] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

impl<F> Tensor<F> {
    pub fn cast<G: Real>(&self) -> Tensor<G>
    where
        F: Real,
    {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| G::of(v.to_f64().unwrap())).collect(),
        }
    }
}
