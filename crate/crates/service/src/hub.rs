use std::collections::VecDeque;
use std::sync::Mutex;

use nemesys_core::detect::Alert;
use tokio::sync::mpsc;

struct HubState {
    recent: VecDeque<Alert>,
    capacity: usize,
    subscribers: Vec<mpsc::UnboundedSender<Alert>>,
}

/// Fan-out of published alerts with a replay window for late subscribers.
///
/// Each subscriber has its own queue, so a slow reader never loses alerts
/// and sees them in publication order. Closed subscribers are dropped on
/// the next publish.
pub struct AlertHub {
    state: Mutex<HubState>,
}

impl AlertHub {
    pub fn new(capacity: usize) -> Self {
        AlertHub { state: Mutex::new(HubState { recent: VecDeque::new(), capacity, subscribers: Vec::new() }) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn publish(&self, alert: Alert) {
        let mut s = self.lock();
        if s.capacity > 0 {
            if s.recent.len() == s.capacity {
                s.recent.pop_front();
            }
            s.recent.push_back(alert.clone());
        }
        s.subscribers.retain(|tx| tx.send(alert.clone()).is_ok());
    }

    /// The replay window, minus alerts up to `after`, and a receiver for
    /// everything published from now on. No alert is missed or repeated
    /// between the two.
    pub fn subscribe(&self, after: Option<u64>) -> (Vec<Alert>, mpsc::UnboundedReceiver<Alert>) {
        let mut s = self.lock();
        let replay = s.recent.iter().filter(|a| after.is_none_or(|id| a.alert_id > id)).cloned().collect();
        let (tx, rx) = mpsc::unbounded_channel();
        s.subscribers.push(tx);
        (replay, rx)
    }

    pub fn subscriber_count(&self) -> usize {
        let mut s = self.lock();
        s.subscribers.retain(|tx| !tx.is_closed());
        s.subscribers.len()
    }
}
