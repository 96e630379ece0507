use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalProcess {
    /// Exponential inter-arrival times. A zero rate generates no requests.
    Poisson {
        rate: f64,
    },
    Deterministic {
        interval_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceTime {
    Constant { seconds: f64 },
    Exponential { mean: f64 },
    Pareto { shape: f64, scale: f64 },
}

impl ServiceTime {
    /// Pareto parameters with the given mean (`shape > 1`).
    pub fn pareto_with_mean(shape: f64, mean: f64) -> Self {
        ServiceTime::Pareto {
            shape,
            scale: mean * (shape - 1.0) / shape,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceTime::Constant { seconds } => seconds,
            ServiceTime::Exponential { mean } => mean,
            ServiceTime::Pareto { shape, scale } if shape > 1.0 => shape * scale / (shape - 1.0),
            ServiceTime::Pareto { .. } => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDistribution {
    Constant { bytes: u32 },
    Uniform { min: u32, max: u32 },
    Exponential { mean: f64 },
}

impl SizeDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            SizeDistribution::Constant { bytes } => f64::from(bytes),
            SizeDistribution::Uniform { min, max } => 0.5 * (f64::from(min) + f64::from(max)),
            SizeDistribution::Exponential { mean } => mean,
        }
    }
}

/// Sessions already bound to one backend when the run starts. They drain
/// at evenly spaced times up to `drain_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStart {
    /// Zero-based index into the server list.
    pub server: usize,
    pub sessions: u32,
    pub drain_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub arrival: ArrivalProcess,
    pub service: ServiceTime,
    pub request_size: SizeDistribution,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of clients that never close their connection after the
    /// response completes; their sessions are left for the reaper.
    #[serde(default)]
    pub silent_fraction: f64,
    /// Spacing of response chunks while a request is in service.
    #[serde(default = "default_chunk_interval")]
    pub chunk_interval_s: f64,
    #[serde(default)]
    pub warm_start: Option<WarmStart>,
}

fn default_chunk_interval() -> f64 {
    1.0
}

impl WorkloadSpec {
    pub fn validate(&self, servers: usize) -> Vec<SimError> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, msg: String| {
            errs.push(SimError::Config(format!("workload.{field}: {msg}")));
        };
        match self.arrival {
            ArrivalProcess::Poisson { rate } if !(rate >= 0.0 && rate.is_finite()) => {
                bad("arrival.rate", format!("must be >= 0, got {rate}"))
            }
            ArrivalProcess::Deterministic { interval_s }
                if interval_s.is_nan() || interval_s <= 0.0 =>
            {
                bad(
                    "arrival.interval_s",
                    format!("must be > 0, got {interval_s}"),
                )
            }
            _ => {}
        }
        match self.service {
            ServiceTime::Constant { seconds } if !(seconds >= 0.0 && seconds.is_finite()) => {
                bad("service.seconds", format!("must be >= 0, got {seconds}"))
            }
            ServiceTime::Exponential { mean } if !(mean > 0.0 && mean.is_finite()) => {
                bad("service.mean", format!("must be > 0, got {mean}"))
            }
            ServiceTime::Pareto { shape, scale } if !(shape > 0.0 && scale > 0.0) => bad(
                "service",
                format!("pareto shape and scale must be > 0, got ({shape}, {scale})"),
            ),
            _ => {}
        }
        match self.request_size {
            SizeDistribution::Constant { bytes: 0 } => {
                bad("request_size.bytes", "must be > 0".into())
            }
            SizeDistribution::Uniform { min, max } if min == 0 || max < min => bad(
                "request_size",
                format!("uniform bounds must satisfy 0 < min <= max, got ({min}, {max})"),
            ),
            SizeDistribution::Exponential { mean } if mean.is_nan() || mean < 1.0 => {
                bad("request_size.mean", format!("must be >= 1, got {mean}"))
            }
            _ => {}
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            bad(
                "duration_s",
                format!("must be > 0, got {}", self.duration_s),
            );
        }
        if !(0.0..=1.0).contains(&self.silent_fraction) {
            bad(
                "silent_fraction",
                format!("must be in [0, 1], got {}", self.silent_fraction),
            );
        }
        if self.chunk_interval_s.is_nan() || self.chunk_interval_s <= 0.0 {
            bad(
                "chunk_interval_s",
                format!("must be > 0, got {}", self.chunk_interval_s),
            );
        }
        if let Some(w) = &self.warm_start {
            if w.server >= servers {
                bad(
                    "warm_start.server",
                    format!("index {} but only {servers} servers", w.server),
                );
            }
            if w.drain_s.is_nan() || w.drain_s <= 0.0 {
                bad(
                    "warm_start.drain_s",
                    format!("must be > 0, got {}", w.drain_s),
                );
            }
        }
        errs
    }
}

/// One client request: a flow to the VIP held open for `service`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Request {
    pub id: usize,
    /// Index into the topology's client hosts.
    pub client: usize,
    pub arrival: SimTime,
    pub service: SimTime,
    pub size: u32,
    pub silent: bool,
    /// Server index this request is bound to regardless of the scheduler.
    pub pinned: Option<usize>,
}

/// Named pseudorandom substreams derived from one seed. Each consumer has
/// its own stream, so extra draws by one never shift another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Arrivals = 1,
    Service = 2,
    Scheduler = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn sample_size(d: &SizeDistribution, rng: &mut ChaCha8Rng) -> u32 {
    match *d {
        SizeDistribution::Constant { bytes } => bytes,
        SizeDistribution::Uniform { min, max } => Uniform::new_inclusive(min, max)
            .expect("validated bounds")
            .sample(rng),
        SizeDistribution::Exponential { mean } => {
            let x = Exp::new(1.0 / mean).expect("validated mean").sample(rng);
            (x.round() as u32).max(1)
        }
    }
}

fn sample_service(d: &ServiceTime, rng: &mut ChaCha8Rng) -> f64 {
    match *d {
        ServiceTime::Constant { seconds } => seconds,
        ServiceTime::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
        ServiceTime::Pareto { shape, scale } => {
            Pareto::new(scale, shape).expect("validated").sample(rng)
        }
    }
}

/// Expands a workload into its request list. Warm-start sessions come first,
/// then arrivals up to the duration. Arrival times and client choice use the
/// arrival stream; service time, size and silence use the service stream.
pub fn generate_requests(spec: &WorkloadSpec, clients: usize) -> Vec<Request> {
    let mut out = Vec::new();
    if clients == 0 {
        return out;
    }
    if let Some(w) = &spec.warm_start {
        let size = spec.request_size.mean().round().max(1.0) as u32;
        for k in 0..w.sessions {
            out.push(Request {
                id: out.len(),
                client: k as usize % clients,
                // spaced apart so the pinned flows do not share a timestamp
                arrival: SimTime::from_nanos(u64::from(k) * 1_000),
                service: SimTime::from_secs_f64(
                    w.drain_s * f64::from(k + 1) / f64::from(w.sessions),
                ),
                size,
                silent: false,
                pinned: Some(w.server),
            });
        }
    }

    let mut arrivals = stream_rng(spec.seed, Stream::Arrivals);
    let mut service = stream_rng(spec.seed, Stream::Service);
    let horizon = spec.duration_s;
    let mut t = 0.0;
    loop {
        let gap = match spec.arrival {
            ArrivalProcess::Poisson { rate } if rate <= 0.0 => break,
            ArrivalProcess::Poisson { rate } => Exp::new(rate)
                .expect("validated rate")
                .sample(&mut arrivals),
            ArrivalProcess::Deterministic { interval_s } => interval_s,
        };
        t += gap;
        if t >= horizon {
            break;
        }
        let client = arrivals.random_range(0..clients);
        let svc = sample_service(&spec.service, &mut service);
        let size = sample_size(&spec.request_size, &mut service);
        let silent = spec.silent_fraction > 0.0 && service.random::<f64>() < spec.silent_fraction;
        out.push(Request {
            id: out.len(),
            client,
            arrival: SimTime::from_secs_f64(t),
            service: SimTime::from_secs_f64(svc),
            size,
            silent,
            pinned: None,
        });
    }
    out
}

/// Hex SHA-256 over the request list, for checking that runs consumed the
/// same arrival and service sequences.
pub fn request_digest(requests: &[Request]) -> String {
    let mut h = Sha256::new();
    for r in requests {
        h.update((r.id as u64).to_le_bytes());
        h.update((r.client as u64).to_le_bytes());
        h.update(r.arrival.0.to_le_bytes());
        h.update(r.service.0.to_le_bytes());
        h.update(r.size.to_le_bytes());
        h.update([u8::from(r.silent)]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rate: f64) -> WorkloadSpec {
        WorkloadSpec {
            arrival: ArrivalProcess::Poisson { rate },
            service: ServiceTime::Constant { seconds: 5.0 },
            request_size: SizeDistribution::Constant { bytes: 1000 },
            duration_s: 100.0,
            seed: 7,
            silent_fraction: 0.0,
            chunk_interval_s: 1.0,
            warm_start: None,
        }
    }

    #[test]
    fn zero_rate_is_empty() {
        assert!(generate_requests(&spec(0.0), 4).is_empty());
    }

    #[test]
    fn deterministic_arrivals_are_evenly_spaced() {
        let mut s = spec(1.0);
        s.arrival = ArrivalProcess::Deterministic { interval_s: 10.0 };
        let r = generate_requests(&s, 2);
        assert_eq!(r.len(), 9);
        assert_eq!(r[0].arrival, SimTime::from_secs(10));
        assert_eq!(r[8].arrival, SimTime::from_secs(90));
    }

    #[test]
    fn same_seed_same_requests() {
        let a = generate_requests(&spec(3.0), 4);
        let b = generate_requests(&spec(3.0), 4);
        assert_eq!(a, b);
        assert_eq!(request_digest(&a), request_digest(&b));
        let mut other = spec(3.0);
        other.seed = 8;
        assert_ne!(
            request_digest(&a),
            request_digest(&generate_requests(&other, 4))
        );
    }

    #[test]
    fn pareto_mean_helper() {
        let s = ServiceTime::pareto_with_mean(1.5, 5.0);
        assert!((s.mean() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn warm_start_precedes_arrivals() {
        let mut s = spec(1.0);
        s.warm_start = Some(WarmStart {
            server: 0,
            sessions: 4,
            drain_s: 100.0,
        });
        let r = generate_requests(&s, 3);
        assert!(r[..4].iter().all(|q| q.pinned == Some(0)));
        assert_eq!(r[3].service, SimTime::from_secs(100));
        assert!(r[4..].iter().all(|q| q.pinned.is_none()));
    }

    #[test]
    fn validation_reports_each_field() {
        let mut s = spec(-1.0);
        s.duration_s = 0.0;
        s.silent_fraction = 2.0;
        let errs = s.validate(4);
        assert_eq!(errs.len(), 3, "{errs:?}");
    }
}
