use std::collections::BTreeSet;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub lr: f64,
    pub iters: usize,
    pub l2: f64,
    /// Standardise features with training-set mean and deviation first.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iters: 500,
            l2: 1e-4,
            standardize: true,
        }
    }
}

/// Multinomial logistic regression over frozen representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub dim: usize,
    pub n_classes: usize,
    /// Row-major `[dim, n_classes]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub best_iter: usize,
    pub best_val_accuracy: f64,
}

impl ProbeModel {
    fn features(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, m), s)| (v as f64 - m) / s)
            .collect()
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let f = self.features(x);
        logits(&self.w, &self.b, &f, self.n_classes)
    }

    /// Class with the highest logit; ties go to the lowest class.
    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy<V: AsRef<[f32]>>(&self, xs: &[V], ys: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let hits = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x.as_ref()) == y).count();
        hits as f64 / xs.len() as f64
    }
}

fn logits(w: &[f64], b: &[f64], x: &[f64], c: usize) -> Vec<f64> {
    let mut z = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (zk, wk) in z.iter_mut().zip(&w[i * c..(i + 1) * c]) {
            *zk += xi * wk;
        }
    }
    z
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
        .0
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy plus `l2/2 * |w|^2`, with gradients for `w` and `b`.
pub fn probe_loss_and_grad(
    w: &[f64],
    b: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let c = b.len();
    let n = xs.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|&v| l2 * v).collect();
    let mut gb = vec![0.0; c];
    let mut loss = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (x, &y) in xs.iter().zip(ys) {
        let mut p = softmax(&logits(w, b, x, c));
        loss -= p[y].ln() / n;
        p[y] -= 1.0;
        for (i, &xi) in x.iter().enumerate() {
            for (g, &pk) in gw[i * c..(i + 1) * c].iter_mut().zip(&p) {
                *g += xi * pk / n;
            }
        }
        for (g, &pk) in gb.iter_mut().zip(&p) {
            *g += pk / n;
        }
    }
    (loss, gw, gb)
}

/// Full-batch gradient descent from zero weights; returns the iterate with
/// the best validation accuracy (earliest on ties).
pub fn train_probe<V: AsRef<[f32]>>(
    xs_train: &[V],
    ys_train: &[usize],
    xs_val: &[V],
    ys_val: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeModel, EvalError> {
    if xs_train.len() != ys_train.len() || xs_val.len() != ys_val.len() {
        return Err(EvalError::Mismatch("labels and representations differ in count".into()));
    }
    let classes: BTreeSet<usize> = ys_train.iter().copied().collect();
    if classes.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let val_classes: BTreeSet<usize> = ys_val.iter().copied().collect();
    if !ys_val.is_empty() && val_classes != classes {
        return Err(EvalError::Mismatch(format!(
            "train classes {classes:?} differ from validation classes {val_classes:?}"
        )));
    }
    let n_classes = classes.iter().max().map_or(0, |m| m + 1);
    let dim = xs_train[0].as_ref().len();
    if xs_train.iter().chain(xs_val).any(|x| x.as_ref().len() != dim) {
        return Err(EvalError::Mismatch("representations differ in dimension".into()));
    }

    let n = xs_train.len() as f64;
    let (mean, scale) = if cfg.standardize {
        let mean: Vec<f64> = (0..dim)
            .map(|i| xs_train.iter().map(|x| x.as_ref()[i] as f64).sum::<f64>() / n)
            .collect();
        let scale = (0..dim)
            .map(|i| {
                let var = xs_train.iter().map(|x| (x.as_ref()[i] as f64 - mean[i]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };

    let mut model = ProbeModel {
        dim,
        n_classes,
        w: vec![0.0; dim * n_classes],
        b: vec![0.0; n_classes],
        mean,
        scale,
        best_iter: 0,
        best_val_accuracy: f64::NEG_INFINITY,
    };
    let feats: Vec<Vec<f64>> = xs_train.iter().map(|x| model.features(x.as_ref())).collect();
    let mut best = model.clone();
    best.best_val_accuracy = model.accuracy(xs_val, ys_val);
    for it in 1..=cfg.iters {
        let (_, gw, gb) = probe_loss_and_grad(&model.w, &model.b, &feats, ys_train, cfg.l2);
        model.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= cfg.lr * g);
        model.b.iter_mut().zip(&gb).for_each(|(b, g)| *b -= cfg.lr * g);
        let acc = model.accuracy(xs_val, ys_val);
        if acc > best.best_val_accuracy {
            best = model.clone();
            best.best_iter = it;
            best.best_val_accuracy = acc;
        }
    }
    Ok(best)
}
