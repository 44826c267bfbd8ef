//! Buffering actuator: holds the newest control sequence it has received and
//! applies the entry matching the current step.

use nalgebra::DVector;

/// `N + 1` inputs generated at step `origin`; entry `i` is meant for step
/// `origin + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub origin: usize,
    pub entries: Vec<DVector<f64>>,
}

impl ControlSequence {
    pub fn new(origin: usize, entries: Vec<DVector<f64>>) -> Self {
        Self { origin, entries }
    }

    /// Splits a stacked vector `[u_{k|k}; ...; u_{k+N|k}]` into entries of
    /// dimension `m`.
    pub fn from_stacked(origin: usize, stacked: &DVector<f64>, m: usize) -> Self {
        assert!(m > 0 && stacked.len().is_multiple_of(m), "stacked length not a multiple of m");
        let entries = (0..stacked.len() / m)
            .map(|i| stacked.rows(i * m, m).into_owned())
            .collect();
        Self { origin, entries }
    }

    /// A sequence whose every entry is `u`.
    pub fn constant(origin: usize, u: &DVector<f64>, len: usize) -> Self {
        Self {
            origin,
            entries: vec![u.clone(); len],
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let m = self.entries.first().map_or(0, |e| e.len());
        let mut out = DVector::zeros(m * self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            out.rows_mut(i * m, m).copy_from(e);
        }
        out
    }

    pub fn tail_len(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }
}

/// Buffer contents plus the age computed at the last actuation.
///
/// Before the first real sequence arrives the buffer is conceptually filled
/// with default inputs, which is reported as the empty-buffer age `N + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferState {
    pub held: Option<ControlSequence>,
    pub last_theta: Option<usize>,
}

impl BufferState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps whichever of the held sequence and the arrivals was generated
    /// last. Older arrivals are discarded; ties keep the held copy.
    pub fn receive<I>(&mut self, arrivals: I)
    where
        I: IntoIterator<Item = ControlSequence>,
    {
        for seq in arrivals {
            let newer = self.held.as_ref().is_none_or(|h| seq.origin > h.origin);
            if newer {
                self.held = Some(seq);
            }
        }
    }

    /// Applies the input for step `k` and returns it with the buffer age.
    pub fn actuate(
        &mut self,
        k: usize,
        u_default: &DVector<f64>,
        tail: usize,
    ) -> (DVector<f64>, usize) {
        let applicable = self.held.as_ref().and_then(|seq| {
            let age = k.checked_sub(seq.origin)?;
            (age <= tail).then(|| (seq.entries[age].clone(), age))
        });
        let (u, theta) = applicable.unwrap_or_else(|| (u_default.clone(), tail + 1));
        self.last_theta = Some(theta);
        (u, theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(origin: usize, len: usize) -> ControlSequence {
        ControlSequence::new(
            origin,
            (0..len)
                .map(|i| DVector::from_element(1, (origin * 10 + i) as f64))
                .collect(),
        )
    }

    #[test]
    fn out_of_order_arrival_is_discarded() {
        let mut b = BufferState::new();
        b.receive([seq(4, 3)]);
        b.receive([seq(3, 3)]);
        assert_eq!(b.held.as_ref().unwrap().origin, 4);
    }

    #[test]
    fn first_arrival_fills_empty_buffer() {
        let mut b = BufferState::new();
        b.receive([seq(0, 3)]);
        assert_eq!(b.held.as_ref().unwrap().origin, 0);
    }

    #[test]
    fn simultaneous_arrivals_keep_newest() {
        let mut b = BufferState::new();
        b.receive([seq(2, 3), seq(5, 3)]);
        assert_eq!(b.held.as_ref().unwrap().origin, 5);
        let mut b = BufferState::new();
        b.receive([seq(5, 3), seq(2, 3)]);
        assert_eq!(b.held.as_ref().unwrap().origin, 5);
    }

    #[test]
    fn actuation_examples() {
        let ud = DVector::from_element(1, -1.0);
        let mut b = BufferState::new();
        assert_eq!(b.actuate(0, &ud, 2), (ud.clone(), 3));

        b.receive([seq(7, 3)]);
        let (u, theta) = b.actuate(7, &ud, 2);
        assert_eq!((u[0], theta), (70.0, 0));
        let (u, theta) = b.actuate(9, &ud, 2);
        assert_eq!((u[0], theta), (72.0, 2));
        assert_eq!(b.actuate(10, &ud, 2), (ud.clone(), 3));
        assert_eq!(b.last_theta, Some(3));
    }

    #[test]
    fn stacked_round_trip() {
        let s = ControlSequence::from_stacked(3, &DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]), 2);
        assert_eq!(s.entries.len(), 2);
        assert_eq!(s.entries[1].as_slice(), &[3.0, 4.0]);
        assert_eq!(s.stacked().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.tail_len(), 1);
    }

    proptest! {
        #[test]
        fn age_grows_by_at_most_one(
            tail in 0usize..5,
            delays in proptest::collection::vec(proptest::option::of(0usize..8), 1..60),
        ) {
            let ud = DVector::zeros(1);
            let steps = delays.len();
            let mut due: Vec<Vec<ControlSequence>> = vec![Vec::new(); steps + 10];
            let mut b = BufferState::new();
            let mut prev: Option<usize> = None;
            for k in 0..steps {
                if let Some(d) = delays[k] {
                    due[k + d].push(seq(k, tail + 1));
                }
                b.receive(std::mem::take(&mut due[k]));
                let (_, theta) = b.actuate(k, &ud, tail);
                prop_assert!(theta <= tail + 1);
                if let Some(p) = prev {
                    prop_assert!(theta <= p + 1);
                }
                prev = Some(theta);
            }
        }

        #[test]
        fn dead_link_saturates_at_default(tail in 0usize..6, steps in 1usize..30) {
            let ud = DVector::from_element(1, 0.5);
            let mut b = BufferState::new();
            for k in 0..steps {
                b.receive(std::iter::empty());
                let (u, theta) = b.actuate(k, &ud, tail);
                prop_assert_eq!(theta, tail + 1);
                prop_assert_eq!(u, ud.clone());
            }
        }
    }
}
