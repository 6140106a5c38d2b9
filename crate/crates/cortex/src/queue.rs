//! Per-connection outbound queue. When a client falls behind, the oldest
//! eeg/pow events are shed first; responses and com/fac events are kept.

use std::collections::VecDeque;

use mindbus_core::pipeline::StreamName;

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    /// `None` for responses and control notifications.
    pub stream: Option<StreamName>,
    pub text: String,
}

impl Outgoing {
    pub fn control(text: String) -> Self {
        Self { stream: None, text }
    }

    fn sheddable(&self) -> bool {
        self.stream.is_some_and(|s| !s.is_control())
    }
}

#[derive(Debug)]
pub struct OutboundQueue {
    items: VecDeque<Outgoing>,
    capacity: usize,
    dropped: u64,
}

impl OutboundQueue {
    pub fn new(capacity: usize) -> Self {
        Self { items: VecDeque::new(), capacity: capacity.max(1), dropped: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Events shed so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn push(&mut self, item: Outgoing) {
        self.items.push_back(item);
        while self.items.len() > self.capacity {
            match self.items.iter().position(Outgoing::sheddable) {
                Some(i) => {
                    self.items.remove(i);
                    self.dropped += 1;
                }
                // only control traffic left: let the queue grow
                None => break,
            }
        }
    }

    pub fn pop(&mut self) -> Option<Outgoing> {
        self.items.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(kind: u8, n: usize) -> Outgoing {
        let stream = match kind {
            0 => None,
            1 => Some(StreamName::Com),
            2 => Some(StreamName::Fac),
            3 => Some(StreamName::Eeg),
            _ => Some(StreamName::Pow),
        };
        Outgoing { stream, text: n.to_string() }
    }

    proptest! {
        #[test]
        fn sheds_only_telemetry_and_keeps_order(
            ops in prop::collection::vec(prop_oneof![(0u8..5).prop_map(Some), Just(None)], 0..400),
            capacity in 1usize..32,
        ) {
            let mut q = OutboundQueue::new(capacity);
            let mut pushed = Vec::new();
            let mut popped = Vec::new();
            for (n, op) in ops.iter().enumerate() {
                match op {
                    Some(kind) => {
                        let it = item(*kind, n);
                        pushed.push(it.clone());
                        q.push(it);
                    }
                    None => popped.extend(q.pop()),
                }
                let control = q.items.iter().filter(|i| !i.sheddable()).count();
                prop_assert!(q.len() <= capacity.max(control));
            }
            while let Some(it) = q.pop() {
                popped.push(it);
            }
            // every control item comes out, in push order
            let control_in: Vec<_> = pushed.iter().filter(|i| !i.sheddable()).collect();
            let control_out: Vec<_> = popped.iter().filter(|i| !i.sheddable()).collect();
            prop_assert_eq!(control_in, control_out);
            // output is a subsequence of input
            let idx: Vec<usize> = popped.iter().map(|i| i.text.parse().unwrap()).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(popped.len() as u64 + q.dropped(), pushed.len() as u64);
        }
    }

    #[test]
    fn oldest_telemetry_goes_first() {
        let mut q = OutboundQueue::new(3);
        q.push(item(3, 0));
        q.push(item(1, 1));
        q.push(item(4, 2));
        q.push(item(3, 3));
        let texts: Vec<String> = std::iter::from_fn(|| q.pop()).map(|i| i.text).collect();
        assert_eq!(texts, ["1", "2", "3"]);
    }
}
