//! Loss definitions written as plain loops over items, heads and classes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub b: usize,
    pub m: usize,
    pub k: usize,
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
    pub labels: Vec<Vec<usize>>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let b = rng.random_range(1..=8);
    let m = rng.random_range(1..=4);
    let k = rng.random_range(2..=5);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-6.0..6.0)).collect::<Vec<f64>>();
    let student = draw(b * m * k);
    let teacher = draw(b * m * k);
    let labels = (0..m).map(|_| (0..b).map(|_| rng.random_range(0..k)).collect()).collect();
    Instance { b, m, k, student, teacher, labels }
}

pub fn at(v: &[f64], m: usize, k: usize, b: usize, h: usize, j: usize) -> f64 {
    v[(b * m + h) * k + j]
}

/// `exp(z_j/T) / Σ exp(z_k/T)` straight from the definition.
pub fn naive_soft(z: &[f64], t: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn naive_ce(x: &Instance) -> f64 {
    let mut total = 0.0;
    for h in 0..x.m {
        let mut head = 0.0;
        for b in 0..x.b {
            let z: Vec<f64> = (0..x.k).map(|j| at(&x.student, x.m, x.k, b, h, j)).collect();
            head += -naive_soft(&z, 1.0)[x.labels[h][b]].ln();
        }
        total += head / x.b as f64;
    }
    total
}

pub fn naive_kd(x: &Instance, student: &[f64], t: f64) -> f64 {
    let mut total = 0.0;
    for h in 0..x.m {
        let mut head = 0.0;
        for b in 0..x.b {
            let zs: Vec<f64> = (0..x.k).map(|j| at(student, x.m, x.k, b, h, j)).collect();
            let zt: Vec<f64> = (0..x.k).map(|j| at(&x.teacher, x.m, x.k, b, h, j)).collect();
            let (ps, pt) = (naive_soft(&zs, t), naive_soft(&zt, t));
            for j in 0..x.k {
                head += pt[j] * (pt[j] / ps[j]).ln();
            }
        }
        total += head / x.b as f64;
    }
    total
}

pub fn naive_total(x: &Instance, student: &[f64], t: f64) -> f64 {
    let ce = naive_ce(&Instance {
        student: student.to_vec(),
        teacher: x.teacher.clone(),
        labels: x.labels.clone(),
        ..*x
    });
    ce + t * t * naive_kd(x, student, t)
}
