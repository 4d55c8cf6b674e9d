use super::TrainError;

/// Akima's local cubic through five or more knots.
#[derive(Clone, Debug, PartialEq)]
pub struct Akima {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

pub const MIN_KNOTS: usize = 5;

impl Akima {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self, TrainError> {
        let n = xs.len();
        if n != ys.len() {
            return Err(TrainError::Input(format!("{n} xs but {} ys", ys.len())));
        }
        if n < MIN_KNOTS {
            return Err(TrainError::Input(format!("need at least {MIN_KNOTS} knots, got {n}")));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(TrainError::Input("knots must be finite".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TrainError::Input("xs must be strictly increasing".into()));
        }
        // Chord slopes padded by two on each side with quadratic extrapolation.
        let mut m = vec![0.0; n + 3];
        for i in 0..n - 1 {
            m[i + 2] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }
        m[1] = 2.0 * m[2] - m[3];
        m[0] = 2.0 * m[1] - m[2];
        m[n + 1] = 2.0 * m[n] - m[n - 1];
        m[n + 2] = 2.0 * m[n + 1] - m[n];
        let slopes = (0..n)
            .map(|i| {
                let (a, b, c, d) = (m[i], m[i + 1], m[i + 2], m[i + 3]);
                let (w1, w2) = ((d - c).abs(), (b - a).abs());
                if w1 + w2 == 0.0 {
                    0.5 * (b + c)
                } else {
                    (w1 * b + w2 * c) / (w1 + w2)
                }
            })
            .collect();
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// Value at `x`, clamped to the knot span.
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.span();
        let x = x.clamp(lo, hi);
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.xs.len() - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (t0, t1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * t0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * t1
    }

    /// Minimizer over the knot span: dense sampling at 1e-3 of the span,
    /// then golden-section refinement around the best sample. Ties go to
    /// the leftmost point.
    pub fn argmin(&self) -> (f64, f64) {
        let (lo, hi) = self.span();
        let n = 1000;
        let h = (hi - lo) / n as f64;
        let better = |y: f64, best: f64| y < best - 1e-12 * (1.0 + best.abs());
        let mut best = (lo, self.eval(lo));
        for k in 1..=n {
            let x = lo + k as f64 * h;
            let y = self.eval(x);
            if better(y, best.1) {
                best = (x, y);
            }
        }
        let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.eval(c) < self.eval(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let x = 0.5 * (a + b);
        let y = self.eval(x);
        if better(y, best.1) {
            (x, y)
        } else {
            best
        }
    }
}

pub fn akima_interpolate(xs: &[f64], ys: &[f64]) -> Result<Akima, TrainError> {
    Akima::new(xs, ys)
}
