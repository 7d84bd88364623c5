//! Synthetic markets with planted lead-lag structure.
//!
//! Leaders carry AR(1) return innovations. Each follower's day-`t` return
//! reproduces its leader's day-`t − lag` innovation with weight
//! `signal_strength`, topped up with independent noise so every stock
//! keeps unit shock variance before the common market factor. Prices,
//! volumes and index levels are kept near unit scale.
//!
//! Feature layout: `f_0` today's standardized return, `f_1` yesterday's,
//! `f_2` the scaled 5-day sum, `f_3` the log distance from the 10-day
//! average, `f_4` log relative volume, `f_5` a noisy size score (leaders
//! are the large caps), `f_6`/`f_7` a noisy reading of the stock's group
//! style code (a point on a circle shared by a leader and its followers),
//! and pure noise beyond.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, IndexSeries, Panel};

/// Daily observation noise on the group style code.
const STYLE_NOISE: f64 = 0.1;
const STYLE_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_features: usize,
    pub leader_fraction: f64,
    pub lag: usize,
    pub signal_strength: f64,
    /// AR(1) coefficient of leader innovations.
    pub leader_autocorrelation: f64,
    /// Loading on the common market factor.
    pub market_loading: f64,
    /// Daily return volatility per unit shock.
    pub volatility: f64,
    /// Number of market indices (1 to 3): the whole universe, then
    /// contiguous halves of it.
    pub n_indices: usize,
    pub start_date: NaiveDate,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_stocks: 30,
            n_days: 600,
            n_features: 8,
            leader_fraction: 0.2,
            lag: 2,
            signal_strength: 0.8,
            leader_autocorrelation: 0.2,
            market_loading: 0.25,
            volatility: 0.02,
            n_indices: 3,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
        }
    }
}

/// Planted leader → follower link.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadLag {
    pub follower: String,
    pub leader: String,
    pub lag: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub panel: Panel,
    pub index: IndexSeries,
    pub truth: Vec<LeadLag>,
    /// Return shocks `[day, stock]`; for leaders these are the innovations.
    pub shocks: Vec<f64>,
}

impl SyntheticMarket {
    pub fn shock(&self, day: usize, stock: usize) -> f64 {
        self.shocks[day * self.panel.n_stocks() + stock]
    }
}

/// Mon–Fri calendar of `n` days from `start` (rolled forward to a weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticMarket, DataError> {
    let bad = |msg: String| Err(DataError::InvalidArgument(msg));
    let m = cfg.n_stocks;
    if m < 2 {
        return bad(format!("need at least 2 stocks, got {m}"));
    }
    if cfg.n_features == 0 {
        return bad("need at least one feature".into());
    }
    if cfg.lag == 0 || cfg.lag + 1 >= cfg.n_days {
        return bad(format!("lag {} must be in 1..{} for {} days", cfg.lag, cfg.n_days.saturating_sub(1), cfg.n_days));
    }
    if !(cfg.leader_fraction > 0.0 && cfg.leader_fraction < 1.0) {
        return bad(format!("leader fraction {} must be in (0, 1)", cfg.leader_fraction));
    }
    if !(0.0..=1.0).contains(&cfg.signal_strength) {
        return bad(format!("signal strength {} must be in [0, 1]", cfg.signal_strength));
    }
    if !(cfg.leader_autocorrelation.abs() < 1.0) {
        return bad("leader autocorrelation must lie in (-1, 1)".into());
    }
    if !(1..=3).contains(&cfg.n_indices) || cfg.n_indices > m {
        return bad(format!("index count {} must be 1..=3 and at most the stock count", cfg.n_indices));
    }
    if !(cfg.volatility > 0.0 && cfg.volatility < 0.2) {
        return bad(format!("volatility {} must be in (0, 0.2)", cfg.volatility));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let n_leaders = ((m as f64 * cfg.leader_fraction).round() as usize).clamp(1, m - 1);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut is_leader = vec![false; m];
    for &u in &order[..n_leaders] {
        is_leader[u] = true;
    }
    let leaders: Vec<usize> = (0..m).filter(|&u| is_leader[u]).collect();
    let leader_of: Vec<Option<usize>> = (0..m)
        .map(|u| (!is_leader[u]).then(|| leaders[rng.gen_range(0..leaders.len())]))
        .collect();

    // Shock paths, with `lag` burn-in days so day 0 followers have a source.
    let burn = cfg.lag;
    let total = cfg.n_days + burn;
    let phi = cfg.leader_autocorrelation;
    let s = cfg.signal_strength;
    let mut shocks = vec![0.0; total * m];
    for t in 0..total {
        for &v in &leaders {
            let prev = if t > 0 { shocks[(t - 1) * m + v] } else { 0.0 };
            let fresh = normal(&mut rng);
            shocks[t * m + v] = if t == 0 { fresh } else { phi * prev + (1.0 - phi * phi).sqrt() * fresh };
        }
        for u in 0..m {
            if let Some(v) = leader_of[u] {
                let source = if t >= cfg.lag { shocks[(t - cfg.lag) * m + v] } else { normal(&mut rng) };
                shocks[t * m + u] = s * source + (1.0 - s * s).sqrt() * normal(&mut rng);
            }
        }
    }
    let shocks: Vec<f64> = shocks[burn * m..].to_vec();
    let n = cfg.n_days;

    let market: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let mut returns = vec![0.0; n * m];
    for t in 0..n {
        for u in 0..m {
            let r = cfg.volatility * (shocks[t * m + u] + cfg.market_loading * market[t]);
            returns[t * m + u] = r.max(-0.5);
        }
    }

    let mut closes = vec![0.0; n * m];
    for u in 0..m {
        let mut c = (rng.gen_range(-0.7f64..0.7)).exp();
        for t in 0..n {
            if t > 0 {
                c *= 1.0 + returns[t * m + u];
            }
            closes[t * m + u] = c;
        }
    }

    let base_volume: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..1.5) / m as f64).collect();
    let mut volumes = vec![0.0; n * m];
    for t in 0..n {
        for u in 0..m {
            let jitter = (0.3 * normal(&mut rng)).exp();
            volumes[t * m + u] = base_volume[u] * jitter * (1.0 + 10.0 * returns[t * m + u].abs());
        }
    }

    // Each leader's group shares a point on the unit circle.
    let group_angle = |v: usize| {
        let k = leaders.iter().position(|&l| l == v).expect("leader");
        std::f64::consts::TAU * k as f64 / leaders.len() as f64
    };
    let style: Vec<(f64, f64)> = (0..m)
        .map(|u| {
            let a = group_angle(leader_of[u].unwrap_or(u));
            (STYLE_RADIUS * a.cos(), STYLE_RADIUS * a.sin())
        })
        .collect();

    // Leaders are the large caps.
    let size: Vec<f64> = (0..m).map(|u| if is_leader[u] { 1.0 } else { -0.25 }).collect();

    let f = cfg.n_features;
    let mut features = vec![0.0; n * m * f];
    let z = |t: usize, u: usize| returns[t * m + u] / cfg.volatility;
    for t in 0..n {
        for u in 0..m {
            let row = &mut features[(t * m + u) * f..(t * m + u + 1) * f];
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = match k {
                    0 => z(t, u),
                    1 => if t >= 1 { z(t - 1, u) } else { 0.0 },
                    2 => {
                        let lo = t.saturating_sub(4);
                        (lo..=t).map(|i| z(i, u)).sum::<f64>() / ((t - lo + 1) as f64).sqrt()
                    }
                    3 => {
                        let lo = t.saturating_sub(9);
                        let ma = (lo..=t).map(|i| closes[i * m + u]).sum::<f64>() / (t - lo + 1) as f64;
                        (closes[t * m + u] / ma).ln() / cfg.volatility / 3.0
                    }
                    4 => (volumes[t * m + u] / base_volume[u]).ln(),
                    5 => size[u] + STYLE_NOISE * normal(&mut rng),
                    6 => style[u].0 + STYLE_NOISE * normal(&mut rng),
                    7 => style[u].1 + STYLE_NOISE * normal(&mut rng),
                    _ => normal(&mut rng),
                };
            }
        }
    }

    let dates = business_days(cfg.start_date, n);
    let stocks: Vec<String> = (0..m).map(|u| format!("S{u:03}")).collect();

    let members: Vec<Vec<usize>> = match cfg.n_indices {
        1 => vec![(0..m).collect()],
        k => {
            let half = (m + 1) / 2;
            let mut groups = vec![(0..m).collect::<Vec<_>>(), (0..half).collect()];
            if k == 3 {
                groups.push((half..m).collect());
            }
            groups
        }
    };
    let k = members.len();
    let mut index_prices = vec![0.0; n * k];
    let mut index_volumes = vec![0.0; n * k];
    for t in 0..n {
        for (j, group) in members.iter().enumerate() {
            index_prices[t * k + j] = group.iter().map(|&u| closes[t * m + u]).sum::<f64>() / group.len() as f64;
            index_volumes[t * k + j] = group.iter().map(|&u| volumes[t * m + u]).sum::<f64>();
        }
    }
    let index_names: Vec<String> = ["MKT", "LARGE", "SMALL"][..k].iter().map(|s| s.to_string()).collect();

    let truth = (0..m)
        .filter_map(|u| {
            leader_of[u].map(|v| LeadLag {
                follower: stocks[u].clone(),
                leader: stocks[v].clone(),
                lag: cfg.lag,
                weight: s,
            })
        })
        .collect();

    Ok(SyntheticMarket {
        panel: Panel::new(dates.clone(), stocks, f, features, closes)?,
        index: IndexSeries::new(dates, index_names, index_prices, index_volumes)?,
        truth,
        shocks,
    })
}
