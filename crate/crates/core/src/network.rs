//! Packet transport for the sensor→controller and controller→actuator links.
//!
//! Each packet gets its delay sampled when it is sent and is delivered at
//! exactly `sent_at + delay`. Lost packets are counted and discarded. Several
//! packets may land in the same step and they are handed out in send order,
//! so an older packet can show up after a younger one.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;

use crate::model::DelayPmf;

/// Sampled transmission delay of one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Delay {
    Steps(usize),
    Lost,
}

/// Draws one delay from `pmf`, consuming exactly one uniform variate.
pub fn sample_delay<R: Rng + ?Sized>(pmf: &DelayPmf, rng: &mut R) -> Delay {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in pmf.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Delay::Steps(i);
        }
    }
    Delay::Lost
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet<P> {
    pub sent_at: usize,
    pub delay: Delay,
    pub payload: P,
}

impl<P> Packet<P> {
    pub fn new(sent_at: usize, delay: Delay, payload: P) -> Self {
        Self {
            sent_at,
            delay,
            payload,
        }
    }

    pub fn delivery_time(&self) -> Option<usize> {
        match self.delay {
            Delay::Steps(d) => Some(self.sent_at + d),
            Delay::Lost => None,
        }
    }
}

/// One direction of a link: packets in flight keyed by delivery step.
#[derive(Debug, Clone)]
pub struct Transport<P> {
    in_flight: BTreeMap<usize, Vec<Packet<P>>>,
    sent: usize,
    lost: usize,
    delivered: usize,
}

impl<P> Default for Transport<P> {
    fn default() -> Self {
        Self {
            in_flight: BTreeMap::new(),
            sent: 0,
            lost: 0,
            delivered: 0,
        }
    }
}

impl<P> Transport<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a packet that already carries its sampled delay.
    pub fn send(&mut self, packet: Packet<P>) {
        self.sent += 1;
        match packet.delivery_time() {
            Some(at) => self.in_flight.entry(at).or_default().push(packet),
            None => self.lost += 1,
        }
    }

    /// Samples a delay from `pmf` and queues the payload.
    pub fn send_sampled<R: Rng + ?Sized>(
        &mut self,
        sent_at: usize,
        payload: P,
        pmf: &DelayPmf,
        rng: &mut R,
    ) -> Delay {
        let delay = sample_delay(pmf, rng);
        self.send(Packet::new(sent_at, delay, payload));
        delay
    }

    /// Removes and returns every packet due at step `now`, in send order.
    pub fn transport_step(&mut self, now: usize) -> Vec<Packet<P>> {
        let due = self.in_flight.remove(&now).unwrap_or_default();
        self.delivered += due.len();
        due
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.values().map(Vec::len).sum()
    }

    pub fn sent(&self) -> usize {
        self.sent
    }

    pub fn lost(&self) -> usize {
        self.lost
    }

    pub fn delivered(&self) -> usize {
        self.delivered
    }
}

/// Measurements that reached the controller at one step, as
/// `(origin step, y)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSet {
    pub step: usize,
    pub arrivals: Vec<(usize, DVector<f64>)>,
}

impl MeasurementSet {
    pub fn new(step: usize) -> Self {
        Self {
            step,
            arrivals: Vec::new(),
        }
    }

    pub fn from_packets(step: usize, packets: Vec<Packet<DVector<f64>>>) -> Self {
        let arrivals = packets
            .into_iter()
            .map(|p| {
                debug_assert_eq!(p.delivery_time(), Some(step));
                (p.sent_at, p.payload)
            })
            .collect();
        Self { step, arrivals }
    }

    pub fn origins(&self) -> Vec<usize> {
        self.arrivals.iter().map(|(m, _)| *m).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }
}

/// Same-step acknowledgement channel. The actuator publishes `θ_k` during
/// step `k`; the controller only sees it from step `k + 1` on.
#[derive(Debug, Clone, Default)]
pub struct AckChannel {
    history: Vec<usize>,
}

impl AckChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&mut self, step: usize, theta: usize) {
        assert_eq!(step, self.history.len(), "modes must be published in step order");
        self.history.push(theta);
    }

    /// Everything the controller may know at step `k`: `θ_0 .. θ_{k-1}`.
    pub fn visible_at(&self, k: usize) -> &[usize] {
        &self.history[..k.min(self.history.len())]
    }

    /// `θ_{k-1}`, or `None` at `k = 0`.
    pub fn latest_at(&self, k: usize) -> Option<usize> {
        self.visible_at(k).last().copied()
    }
}

/// Reconstructed delay distributions with the qualitative shape of the two
/// networks used for the cost-versus-sequence-length experiment. These are
/// stand-ins: only their shape (fast/low-loss versus slow/high-loss) is
/// meant to match, not any tabulated values.
pub mod fixtures {
    use crate::model::DelayPmf;

    pub const A_LIKE: &str = "A-like";
    pub const B_LIKE: &str = "B-like";

    /// Mostly undelayed, 5 % loss.
    pub fn a_like() -> DelayPmf {
        DelayPmf::new(vec![0.60, 0.20, 0.08, 0.04, 0.02, 0.01], 0.05)
    }

    /// Rarely undelayed, long tail, 30 % loss.
    pub fn b_like() -> DelayPmf {
        DelayPmf::new(
            vec![0.05, 0.15, 0.15, 0.12, 0.08, 0.05, 0.04, 0.03, 0.02, 0.01],
            0.30,
        )
    }

    pub fn by_name(name: &str) -> Option<DelayPmf> {
        match name {
            A_LIKE => Some(a_like()),
            B_LIKE => Some(b_like()),
            _ => None,
        }
    }

    pub fn names() -> [&'static str; 2] {
        [A_LIKE, B_LIKE]
    }
}
