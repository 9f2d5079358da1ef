//! Message routing between devices and the shared fact store.

use std::collections::{HashMap, VecDeque};
use std::sync::{Mutex, RwLock};

use crate::periph::DeviceMessage;

/// A message waiting for delivery to a peripheral of a device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub from: String,
    pub peripheral: String,
    pub message: DeviceMessage,
}

/// Bounded FIFO; when full the oldest message is dropped.
#[derive(Debug)]
pub struct Mailbox {
    capacity: usize,
    queue: Mutex<VecDeque<Envelope>>,
    dropped: Mutex<u64>,
}

impl Mailbox {
    pub fn new(capacity: usize) -> Mailbox {
        Mailbox {
            capacity,
            queue: Mutex::new(VecDeque::new()),
            dropped: Mutex::new(0),
        }
    }

    pub fn push(&self, env: Envelope) {
        let mut q = self.queue.lock().expect("mailbox lock");
        if q.len() >= self.capacity {
            let old = q.pop_front();
            *self.dropped.lock().expect("mailbox lock") += 1;
            log::warn!("mailbox full, dropped oldest message {:?}", old.map(|e| e.from));
        }
        q.push_back(env);
    }

    pub fn drain(&self) -> Vec<Envelope> {
        self.queue.lock().expect("mailbox lock").drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("mailbox lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        *self.dropped.lock().expect("mailbox lock")
    }
}

/// Namespaced key to bytes map; last writer wins per key.
#[derive(Debug, Default)]
pub struct FactStore {
    inner: RwLock<HashMap<String, HashMap<String, Vec<u8>>>>,
}

impl FactStore {
    pub fn new() -> FactStore {
        FactStore::default()
    }

    pub fn put(&self, ns: &str, key: &str, value: Vec<u8>) {
        self.inner
            .write()
            .expect("fact lock")
            .entry(ns.to_string())
            .or_default()
            .insert(key.to_string(), value);
    }

    pub fn get(&self, ns: &str, key: &str) -> Option<Vec<u8>> {
        self.inner.read().expect("fact lock").get(ns)?.get(key).cloned()
    }

    /// Every key in a namespace, sorted.
    pub fn keys(&self, ns: &str) -> Vec<String> {
        let g = self.inner.read().expect("fact lock");
        let mut keys: Vec<String> = g.get(ns).map(|m| m.keys().cloned().collect()).unwrap_or_default();
        keys.sort();
        keys
    }
}

/// Routes between devices, plus the shared fact store.
#[derive(Debug)]
pub struct Coordinator {
    mailboxes: HashMap<String, Mailbox>,
    /// (from device, source peripheral) to (to device, target peripheral).
    routes: Vec<((String, String), (String, String))>,
    stopped: Mutex<Vec<String>>,
    pub facts: FactStore,
    pub diagnostics: Mutex<Vec<String>>,
}

impl Coordinator {
    pub fn new(devices: &[String], capacity: usize) -> Coordinator {
        Coordinator {
            mailboxes: devices.iter().map(|d| (d.clone(), Mailbox::new(capacity))).collect(),
            routes: Vec::new(),
            stopped: Mutex::new(Vec::new()),
            facts: FactStore::new(),
            diagnostics: Mutex::new(Vec::new()),
        }
    }

    pub fn add_route(&mut self, from: &str, src: &str, to: &str, dst: &str) {
        self.routes.push(((from.into(), src.into()), (to.into(), dst.into())));
    }

    pub fn mark_stopped(&self, device: &str) {
        self.stopped.lock().expect("stopped lock").push(device.to_string());
    }

    fn is_stopped(&self, device: &str) -> bool {
        self.stopped.lock().expect("stopped lock").iter().any(|d| d == device)
    }

    fn diagnose(&self, msg: String) {
        log::info!("{}", msg);
        self.diagnostics.lock().expect("diagnostics lock").push(msg);
    }

    /// Queues a peripheral's output on every matching route. Returns the number of deliveries queued.
    pub fn route(&self, from: &str, peripheral: &str, message: &DeviceMessage) -> usize {
        let mut n = 0;
        for ((f, s), (t, d)) in &self.routes {
            if f != from || s != peripheral {
                continue;
            }
            if self.is_stopped(t) {
                self.diagnose(format!("dropped message from {} to stopped device {}", from, t));
                continue;
            }
            self.mailboxes[t].push(Envelope {
                from: from.to_string(),
                peripheral: d.clone(),
                message: message.clone(),
            });
            n += 1;
        }
        n
    }

    pub fn take_inbox(&self, device: &str) -> Vec<Envelope> {
        self.mailboxes.get(device).map(Mailbox::drain).unwrap_or_default()
    }

    pub fn pending(&self) -> usize {
        self.mailboxes.values().map(Mailbox::len).sum()
    }

    pub fn mailbox(&self, device: &str) -> Option<&Mailbox> {
        self.mailboxes.get(device)
    }
}
