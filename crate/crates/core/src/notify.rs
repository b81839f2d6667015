//! Tag-based notification: clients subscribe to tags, and a notification on a
//! tag fans out to everyone subscribed at that moment. Delivery is
//! at-least-once; clients drop duplicates by per-tag sequence number.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotifyError {
    #[error("malformed tag `{0}`")]
    MalformedTag(String),
    #[error("unknown client {0}")]
    UnknownClient(String),
    #[error("client {0} is not connected")]
    NotConnected(String),
    #[error("bad request `{0}`")]
    BadRequest(String),
}

impl NotifyError {
    pub fn code(&self) -> &'static str {
        match self {
            NotifyError::MalformedTag(_) => "malformed-tag",
            NotifyError::UnknownClient(_) => "unknown-client",
            NotifyError::NotConnected(_) => "not-connected",
            NotifyError::BadRequest(_) => "bad-request",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(String);

impl Tag {
    pub fn new(value: &str) -> Result<Self, NotifyError> {
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(NotifyError::MalformedTag(value.to_string()));
        }
        Ok(Tag(value.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub client: String,
    pub tag: Tag,
    pub since: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotifyEvent {
    pub tag: Tag,
    pub seq: u64,
    pub issued_at: u64,
}

impl NotifyEvent {
    pub fn to_line(&self) -> String {
        format!("EVT {} {}", self.tag, self.seq)
    }
}

#[derive(Debug, Clone, Default)]
struct ClientQueue {
    connected: bool,
    /// Unacknowledged events in issue order.
    outbox: VecDeque<NotifyEvent>,
    /// Prefix of `outbox` already sent on the current connection.
    sent: usize,
}

#[derive(Debug, Clone, Default)]
pub struct NotifyServer {
    subscriptions: BTreeMap<Tag, BTreeMap<String, Subscription>>,
    seqs: BTreeMap<Tag, u64>,
    clients: BTreeMap<String, ClientQueue>,
    issued: Vec<NotifyEvent>,
}

impl NotifyServer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a client connection. Idempotent.
    pub fn connect(&mut self, client: &str) {
        let q = self.clients.entry(client.to_string()).or_default();
        if !q.connected {
            q.connected = true;
            q.sent = 0;
        }
    }

    /// Drops the connection. Unacknowledged events are resent after reconnect.
    pub fn disconnect(&mut self, client: &str) -> Result<(), NotifyError> {
        let q = self
            .clients
            .get_mut(client)
            .ok_or_else(|| NotifyError::UnknownClient(client.to_string()))?;
        q.connected = false;
        q.sent = 0;
        Ok(())
    }

    pub fn is_connected(&self, client: &str) -> bool {
        self.clients.get(client).is_some_and(|q| q.connected)
    }

    /// Returns the subscription and whether it is new. Subscribing again
    /// returns the existing one.
    pub fn subscribe(&mut self, client: &str, tag: &str, now: u64) -> Result<(Subscription, bool), NotifyError> {
        let tag = Tag::new(tag)?;
        self.clients.entry(client.to_string()).or_insert_with(|| ClientQueue {
            connected: true,
            ..Default::default()
        });
        let subs = self.subscriptions.entry(tag.clone()).or_default();
        if let Some(existing) = subs.get(client) {
            return Ok((existing.clone(), false));
        }
        let sub = Subscription {
            client: client.to_string(),
            tag,
            since: now,
        };
        subs.insert(client.to_string(), sub.clone());
        Ok((sub, true))
    }

    /// Events already queued for the client on this tag are still delivered.
    pub fn unsubscribe(&mut self, client: &str, tag: &str) -> Result<bool, NotifyError> {
        let tag = Tag::new(tag)?;
        Ok(self
            .subscriptions
            .get_mut(&tag)
            .is_some_and(|subs| subs.remove(client).is_some()))
    }

    pub fn subscribers(&self, tag: &str) -> Vec<String> {
        Tag::new(tag)
            .ok()
            .and_then(|t| self.subscriptions.get(&t))
            .map(|subs| subs.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Issues the next event on `tag` and queues it for every current subscriber.
    pub fn notify(&mut self, tag: &str, now: u64) -> Result<(NotifyEvent, usize), NotifyError> {
        let tag = Tag::new(tag)?;
        let seq = self.seqs.entry(tag.clone()).or_insert(0);
        *seq += 1;
        let event = NotifyEvent {
            tag: tag.clone(),
            seq: *seq,
            issued_at: now,
        };
        let mut fanout = 0;
        if let Some(subs) = self.subscriptions.get(&tag) {
            for client in subs.keys() {
                if let Some(q) = self.clients.get_mut(client) {
                    q.outbox.push_back(event.clone());
                    fanout += 1;
                }
            }
        }
        self.issued.push(event.clone());
        Ok((event, fanout))
    }

    /// Everything queued for the client and not yet sent on this connection.
    pub fn deliver(&mut self, client: &str) -> Result<Vec<NotifyEvent>, NotifyError> {
        let q = self
            .clients
            .get_mut(client)
            .ok_or_else(|| NotifyError::UnknownClient(client.to_string()))?;
        if !q.connected {
            return Err(NotifyError::NotConnected(client.to_string()));
        }
        let out: Vec<NotifyEvent> = q.outbox.iter().skip(q.sent).cloned().collect();
        q.sent = q.outbox.len();
        Ok(out)
    }

    /// Cumulative per tag: acknowledges every queued event on `tag` up to `seq`.
    pub fn ack(&mut self, client: &str, tag: &str, seq: u64) -> Result<usize, NotifyError> {
        let tag = Tag::new(tag)?;
        let q = self
            .clients
            .get_mut(client)
            .ok_or_else(|| NotifyError::UnknownClient(client.to_string()))?;
        let mut removed = 0;
        let mut removed_sent = 0;
        let mut idx = 0;
        q.outbox.retain(|e| {
            let drop = e.tag == tag && e.seq <= seq;
            if drop {
                removed += 1;
                if idx < q.sent {
                    removed_sent += 1;
                }
            }
            idx += 1;
            !drop
        });
        q.sent -= removed_sent;
        Ok(removed)
    }

    pub fn pending(&self, client: &str) -> usize {
        self.clients.get(client).map_or(0, |q| q.outbox.len())
    }

    pub fn last_seq(&self, tag: &str) -> u64 {
        Tag::new(tag)
            .ok()
            .and_then(|t| self.seqs.get(&t).copied())
            .unwrap_or(0)
    }

    pub fn issued(&self) -> &[NotifyEvent] {
        &self.issued
    }

    /// Handles one command line from `client`. Replies are `OK [payload]` or
    /// `ERR <code>`; queued events are then pushed as `EVT` lines.
    pub fn handle_line(&mut self, client: &str, line: &str, now: u64) -> Vec<String> {
        let reply = match self.dispatch(client, line, now) {
            Ok(None) => "OK".to_string(),
            Ok(Some(payload)) => format!("OK {payload}"),
            Err(e) => format!("ERR {}", e.code()),
        };
        let mut out = vec![reply];
        if let Ok(events) = self.deliver(client) {
            out.extend(events.iter().map(NotifyEvent::to_line));
        }
        out
    }

    fn dispatch(&mut self, client: &str, line: &str, now: u64) -> Result<Option<String>, NotifyError> {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["SUB", tag] => self.subscribe(client, tag, now).map(|_| None),
            ["UNSUB", tag] => self.unsubscribe(client, tag).map(|_| None),
            ["NOTIFY", tag] => self.notify(tag, now).map(|(e, _)| Some(e.seq.to_string())),
            ["ACK", tag, seq] => {
                let seq = seq
                    .parse()
                    .map_err(|_| NotifyError::BadRequest(line.to_string()))?;
                self.ack(client, tag, seq).map(|_| None)
            }
            _ => Err(NotifyError::BadRequest(line.to_string())),
        }
    }
}

/// Parses an `EVT <tag> <seq>` push line.
pub fn parse_event_line(line: &str) -> Option<(Tag, u64)> {
    let mut words = line.split_whitespace();
    match (words.next(), words.next(), words.next(), words.next()) {
        (Some("EVT"), Some(tag), Some(seq), None) => Some((Tag::new(tag).ok()?, seq.parse().ok()?)),
        _ => None,
    }
}

/// Client-side duplicate filter.
#[derive(Debug, Clone, Default)]
pub struct NotifyClient {
    last_seen: BTreeMap<Tag, u64>,
}

impl NotifyClient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the events not seen before, in input order.
    pub fn accept(&mut self, events: &[NotifyEvent]) -> Vec<NotifyEvent> {
        events
            .iter()
            .filter(|e| {
                let last = self.last_seen.entry(e.tag.clone()).or_insert(0);
                if e.seq > *last {
                    *last = e.seq;
                    true
                } else {
                    false
                }
            })
            .cloned()
            .collect()
    }

    pub fn last_seen(&self, tag: &str) -> u64 {
        Tag::new(tag)
            .ok()
            .and_then(|t| self.last_seen.get(&t).copied())
            .unwrap_or(0)
    }
}

/// A server shared between client sessions on different threads.
#[derive(Debug, Clone, Default)]
pub struct SharedNotifyServer {
    inner: Arc<Mutex<NotifyServer>>,
}

impl SharedNotifyServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lock(&self) -> MutexGuard<'_, NotifyServer> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn handle_line(&self, client: &str, line: &str, now: u64) -> Vec<String> {
        self.lock().handle_line(client, line, now)
    }
}
