//! Classical fourth-order Runge-Kutta on flat state vectors.

/// Scratch buffers for [`Rk4::step`]; reuse one per state dimension.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.k1.len()
    }

    /// Advances `x` from `t` to `t + h` in place.
    pub fn step<F, E>(&mut self, f: &mut F, t: f64, x: &mut [f64], h: f64) -> Result<(), E>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E> + ?Sized,
    {
        let n = x.len();
        assert_eq!(n, self.dim(), "state dimension changed");
        f(t, x, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }

    /// `substeps` equal RK4 steps covering `[t, t + h]`.
    pub fn step_split<F, E>(
        &mut self,
        f: &mut F,
        t: f64,
        x: &mut [f64],
        h: f64,
        substeps: usize,
    ) -> Result<(), E>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E> + ?Sized,
    {
        let dt = h / substeps as f64;
        for k in 0..substeps {
            self.step(f, t + k as f64 * dt, x, dt)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn decay(_t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), Infallible> {
        dx[0] = -x[0];
        Ok(())
    }

    #[test]
    fn exponential_decay() {
        let mut rk = Rk4::new(1);
        let mut x = [1.0];
        rk.step(&mut decay, 0.0, &mut x, 1e-2).unwrap();
        assert!((x[0] - (-1e-2f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn local_error_is_fifth_order() {
        // x' = cos(t) x, exact x = exp(sin t)
        let mut f = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<(), Infallible> {
            dx[0] = t.cos() * x[0];
            Ok(())
        };
        let t0 = 0.3;
        let exact = |h: f64| (t0 + h).sin().exp() / t0.sin().exp();
        let mut rk = Rk4::new(1);
        let err = |h: f64, rk: &mut Rk4, f: &mut dyn FnMut(f64, &[f64], &mut [f64]) -> Result<(), Infallible>| {
            let mut x = [1.0];
            rk.step(f, t0, &mut x, h).unwrap();
            (x[0] - exact(h)).abs()
        };
        let e1 = err(0.1, &mut rk, &mut f);
        let e2 = err(0.05, &mut rk, &mut f);
        let order = (e1 / e2).log2();
        assert!(order > 4.5, "local order {order}");
    }

    #[test]
    fn split_matches_repeated_steps() {
        let mut rk = Rk4::new(1);
        let mut a = [2.0];
        rk.step_split(&mut decay, 0.0, &mut a, 0.4, 4).unwrap();
        let mut b = [2.0];
        for k in 0..4 {
            rk.step(&mut decay, k as f64 * 0.1, &mut b, 0.1).unwrap();
        }
        assert_eq!(a, b);
    }
}
