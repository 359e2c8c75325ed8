//! Exact and leading-order heat kernels of the lazy asymmetric walk.

use crate::error::{invalid, Result};
use serde::Serialize;
use std::f64::consts::PI;

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    #[inline]
    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        let (t, f) = Self::two_sum(self.lo, o.lo);
        let (s, e) = Self::quick_two_sum(s, e + t);
        let (hi, lo) = Self::quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p);
        let (hi, lo) = Self::quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Distribution of the displacement after `t` steps.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct KernelTable {
    pub t: u64,
    pub alpha: f64,
    pub q: f64,
    pub lazy: bool,
    /// `mass[i]` is the probability of offset `i - t`.
    pub mass: Vec<f64>,
}

impl KernelTable {
    pub fn min_offset(&self) -> i64 {
        -(self.t as i64)
    }

    pub fn max_offset(&self) -> i64 {
        self.t as i64
    }

    pub fn mass_at(&self, z: i64) -> f64 {
        let i = z + self.t as i64;
        if i < 0 || i as usize >= self.mass.len() {
            0.0
        } else {
            self.mass[i as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let lo = self.min_offset();
        self.mass
            .iter()
            .enumerate()
            .map(move |(i, &m)| (lo + i as i64, m))
    }

    pub fn total(&self) -> f64 {
        self.mass
            .iter()
            .fold(Dd::ZERO, |acc, &m| acc.add(Dd::from_f64(m)))
            .to_f64()
    }

    pub fn mean(&self) -> f64 {
        self.iter()
            .fold(Dd::ZERO, |acc, (z, m)| {
                acc.add(Dd::from_f64(m).mul_f64(z as f64))
            })
            .to_f64()
    }

    /// Law of the sum of two independent displacements.
    pub fn convolve(&self, other: &KernelTable) -> KernelTable {
        let t = self.t + other.t;
        let mut acc = vec![Dd::ZERO; 2 * t as usize + 1];
        for (i, &a) in self.mass.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.mass.iter().enumerate() {
                let p = Dd::from_f64(a).mul_f64(b);
                acc[i + j] = acc[i + j].add(p);
            }
        }
        KernelTable {
            t,
            alpha: self.alpha,
            q: self.q,
            lazy: self.lazy,
            mass: acc.into_iter().map(Dd::to_f64).collect(),
        }
    }

    /// Smallest offset range `[a, b]` leaving at most `tail` mass on each side.
    pub fn central_range(&self, tail: f64) -> (i64, i64) {
        let mut acc = 0.0;
        let mut a = 0;
        while a + 1 < self.mass.len() && acc + self.mass[a] <= tail {
            acc += self.mass[a];
            a += 1;
        }
        let mut acc = 0.0;
        let mut b = self.mass.len() - 1;
        while b > a && acc + self.mass[b] <= tail {
            acc += self.mass[b];
            b -= 1;
        }
        (a as i64 + self.min_offset(), b as i64 + self.min_offset())
    }
}

fn one_step(alpha: f64, q: f64, lazy: bool) -> [f64; 3] {
    if lazy {
        [alpha * (1.0 - q), 1.0 - alpha, alpha * q]
    } else {
        [1.0 - q, 0.0, q]
    }
}

/// Exact `t`-step kernel by iterated convolution in double-double arithmetic.
/// For `lazy == false` the walk jumps every step and `alpha` is ignored.
pub fn exact_kernel(t: u64, alpha: f64, q: f64, lazy: bool) -> Result<KernelTable> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("q", format!("{q} not in [0, 1]")));
    }
    if lazy && !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", format!("{alpha} not in [0, 1]")));
    }
    let [pl, ps, pr] = one_step(alpha, q, lazy);
    let w = 2 * t as usize + 1;
    let mut cur = vec![Dd::ZERO; w];
    let mut next = vec![Dd::ZERO; w];
    let c = t as usize;
    cur[c] = Dd::from_f64(1.0);
    for s in 0..t as usize {
        let (lo, hi) = (c - s, c + s);
        for i in lo.saturating_sub(1)..=(hi + 1).min(w - 1) {
            let mut v = Dd::ZERO;
            if i + 1 <= hi && i + 1 >= lo {
                v = v.add(cur[i + 1].mul_f64(pl));
            }
            if i >= lo && i <= hi && ps != 0.0 {
                v = v.add(cur[i].mul_f64(ps));
            }
            if i >= lo + 1 && i - 1 <= hi {
                v = v.add(cur[i - 1].mul_f64(pr));
            }
            next[i] = v;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(KernelTable {
        t,
        alpha: if lazy { alpha } else { 1.0 },
        q,
        lazy,
        mass: cur.into_iter().map(Dd::to_f64).collect(),
    })
}

/// Leading-order value of the non-lazy kernel at offset `2z` after `2n` steps.
pub fn asymptotic_kernel(n: u64, z: i64, q: f64) -> Result<f64> {
    let nf = n as f64;
    let zf = z as f64;
    if zf.abs() >= nf {
        return Err(invalid(
            "z",
            format!("|z| = {} must be below n = {n}", z.abs()),
        ));
    }
    let w = zf - (2.0 * q - 1.0) * nf;
    let pre = (nf / (PI * (nf * nf - zf * zf))).sqrt();
    Ok(pre * (-(w * w) / (4.0 * q * (1.0 - q) * nf)).exp())
}

/// One row of a kernel dump.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct KernelRow {
    pub offset: i64,
    pub mass: f64,
    pub asymptotic_value: f64,
    pub rel_error: f64,
}

/// Exact kernel next to its leading-order approximation. Non-lazy kernels with
/// an even step count use the binomial asymptotics; everything else uses the
/// Gaussian local limit with matching mean and variance.
pub fn kernel_dump(table: &KernelTable) -> Vec<KernelRow> {
    let t = table.t as f64;
    let (alpha, q) = (table.alpha, table.q);
    let binomial = !table.lazy && table.t % 2 == 0;
    let mu = t * alpha * (2.0 * q - 1.0);
    let var = t * (alpha - (alpha * (2.0 * q - 1.0)).powi(2));
    table
        .iter()
        .filter(|&(z, _)| table.lazy || (z + table.t as i64) % 2 == 0)
        .map(|(z, m)| {
            let a = if binomial {
                asymptotic_kernel(table.t / 2, z / 2, q).unwrap_or(0.0)
            } else if var > 0.0 {
                (-(z as f64 - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
            } else {
                0.0
            };
            let rel = if m > 0.0 {
                (a - m).abs() / m
            } else {
                f64::INFINITY
            };
            KernelRow {
                offset: z,
                mass: m,
                asymptotic_value: a,
                rel_error: rel,
            }
        })
        .collect()
}

/// Largest relative error of the binomial asymptotics over `|w| <= sqrt(n)`
/// for the non-lazy kernel after `2n` steps.
pub fn asymptotic_max_rel_error(two_n: u64, q: f64) -> Result<f64> {
    if two_n % 2 != 0 {
        return Err(invalid("two_n", "step count must be even"));
    }
    let n = two_n / 2;
    let table = exact_kernel(two_n, 1.0, q, false)?;
    let nf = n as f64;
    let centre = (2.0 * q - 1.0) * nf;
    let r = nf.sqrt();
    let mut worst: f64 = 0.0;
    let zlo = (centre - r).ceil() as i64;
    let zhi = (centre + r).floor() as i64;
    for z in zlo..=zhi {
        if (z as f64).abs() >= nf {
            continue;
        }
        let exact = table.mass_at(2 * z);
        let approx = asymptotic_kernel(n, z, q)?;
        worst = worst.max((approx - exact).abs() / exact);
    }
    Ok(worst)
}

/// Cumulative tables of the lazy kernel for every step count up to `max_t`,
/// used to jump a particle ahead by several steps with one uniform.
#[derive(Debug)]
pub struct JumpTables {
    pub alpha: f64,
    pub q: f64,
    cdf: Vec<Vec<f64>>,
}

impl JumpTables {
    pub fn new(alpha: f64, q: f64, max_t: usize) -> Self {
        let [pl, ps, pr] = one_step(alpha, q, true);
        let mut cdf = Vec::with_capacity(max_t + 1);
        let mut cur = vec![Dd::from_f64(1.0)];
        cdf.push(vec![1.0]);
        for _ in 0..max_t {
            let w = cur.len() + 2;
            let mut next = vec![Dd::ZERO; w];
            for (i, &m) in cur.iter().enumerate() {
                next[i] = next[i].add(m.mul_f64(pl));
                next[i + 1] = next[i + 1].add(m.mul_f64(ps));
                next[i + 2] = next[i + 2].add(m.mul_f64(pr));
            }
            let mut acc = Dd::ZERO;
            let mut c: Vec<f64> = next
                .iter()
                .map(|&m| {
                    acc = acc.add(m);
                    acc.to_f64()
                })
                .collect();
            *c.last_mut().unwrap() = 1.0;
            cdf.push(c);
            cur = next;
        }
        JumpTables { alpha, q, cdf }
    }

    pub fn max_t(&self) -> usize {
        self.cdf.len() - 1
    }

    /// Displacement after `k` steps from a single uniform `u` in `[0, 1)`.
    #[inline]
    pub fn displacement(&self, k: usize, u: f64) -> i64 {
        let c = &self.cdf[k];
        let idx = c.partition_point(|&v| v <= u).min(c.len() - 1);
        idx as i64 - k as i64
    }
}
