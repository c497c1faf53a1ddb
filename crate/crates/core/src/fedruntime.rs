//! Server/client round orchestration: message types and their wire layout,
//! an in-memory transport, uplink cost metering, and participation sampling.
//!
//! Only uplink traffic (client to server) is metered; broadcasts are logged
//! by the transport but excluded from the communication-cost metric.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{sample_without_replacement, Matrix, Rng};

/// Sender id used by the server in message headers.
pub const SERVER_ID: u32 = u32::MAX;

/// Payload variants exchanged between server and clients.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    /// Server-to-client: the current global centroid model (M x K).
    BroadcastW(Matrix),
    /// Client-to-server: a locally updated centroid model (M x K).
    UploadW(Matrix),
    /// Client-to-server: differential gradient statistics
    /// `U` (K x K, change in `H Hᵀ`) and `V` (M x K, change in `X Hᵀ`).
    UploadDiff { u: Matrix, v: Matrix },
}

impl MessageBody {
    /// Number of real values carried by this payload.
    pub fn real_value_count(&self) -> u64 {
        match self {
            MessageBody::BroadcastW(w) | MessageBody::UploadW(w) => {
                (w.rows() * w.cols()) as u64
            }
            MessageBody::UploadDiff { u, v } => {
                (u.rows() * u.cols() + v.rows() * v.cols()) as u64
            }
        }
    }

    fn tag(&self) -> u8 {
        match self {
            MessageBody::BroadcastW(_) => 0,
            MessageBody::UploadW(_) => 1,
            MessageBody::UploadDiff { .. } => 2,
        }
    }
}

/// A routed message: header fields plus payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: u32,
    pub sender: u32,
    pub body: MessageBody,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix_payload(buf: &mut Vec<u8>, m: &Matrix) {
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::FormatDimOverflow(format!("dimension {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::FormatTruncated {
                expected: self.at + n,
                got: self.buf.len(),
            });
        }
        let out = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::FormatDimOverflow(format!("{rows} x {cols}")))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::FormatDimOverflow(format!("{rows} x {cols} payload bytes"))
        })?)?;
        let mut data = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        Matrix::from_col_major(rows, cols, data)
    }
}

impl Message {
    /// Wire layout: variant tag `u8`, round `u32`, sender `u32`, rows `u32`,
    /// cols `u32` (all little-endian), then the little-endian `f64`
    /// column-major payload. `rows`/`cols` describe the centroid shape
    /// (M, K); a differential upload carries the K x K block first, then
    /// the M x K block.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.push(self.body.tag());
        push_u32(&mut buf, self.round);
        push_u32(&mut buf, self.sender);
        match &self.body {
            MessageBody::BroadcastW(w) | MessageBody::UploadW(w) => {
                push_u32(&mut buf, dim_u32(w.rows())?);
                push_u32(&mut buf, dim_u32(w.cols())?);
                push_matrix_payload(&mut buf, w);
            }
            MessageBody::UploadDiff { u, v } => {
                if u.rows() != v.cols() || u.cols() != v.cols() {
                    return Err(Error::Protocol(format!(
                        "differential upload blocks must be KxK and MxK, got {}x{} and {}x{}",
                        u.rows(),
                        u.cols(),
                        v.rows(),
                        v.cols()
                    )));
                }
                push_u32(&mut buf, dim_u32(v.rows())?);
                push_u32(&mut buf, dim_u32(v.cols())?);
                push_matrix_payload(&mut buf, u);
                push_matrix_payload(&mut buf, v);
            }
        }
        Ok(buf)
    }

    pub fn decode(buf: &[u8]) -> Result<Message> {
        let mut r = Reader { buf, at: 0 };
        let tag = r.u8()?;
        let round = r.u32()?;
        let sender = r.u32()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let body = match tag {
            0 => MessageBody::BroadcastW(r.matrix(rows, cols)?),
            1 => MessageBody::UploadW(r.matrix(rows, cols)?),
            2 => MessageBody::UploadDiff {
                u: r.matrix(cols, cols)?,
                v: r.matrix(rows, cols)?,
            },
            t => return Err(Error::FormatBadHeader(format!("unknown message tag {t}"))),
        };
        if r.at != buf.len() {
            return Err(Error::FormatMalformedValue(format!(
                "{} trailing bytes after payload",
                buf.len() - r.at
            )));
        }
        Ok(Message {
            round,
            sender,
            body,
        })
    }
}

/// Message destination or source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Server,
    Client(usize),
}

/// In-memory FIFO transport between one server and `P` clients.
///
/// A networked deployment can replace this behind the same send/recv
/// surface; the simulator ships only this implementation.
#[derive(Debug)]
pub struct InMemoryTransport {
    server_inbox: VecDeque<Message>,
    client_inbox: Vec<VecDeque<Message>>,
    log: Option<Vec<(Endpoint, Vec<u8>)>>,
}

impl InMemoryTransport {
    pub fn new(clients: usize) -> Self {
        Self {
            server_inbox: VecDeque::new(),
            client_inbox: (0..clients).map(|_| VecDeque::new()).collect(),
            log: None,
        }
    }

    /// Start recording the encoded bytes of every delivered message.
    pub fn enable_recording(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn recorded(&self) -> Option<&[(Endpoint, Vec<u8>)]> {
        self.log.as_deref()
    }

    pub fn send(&mut self, to: Endpoint, msg: Message) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.push((to, msg.encode()?));
        }
        match to {
            Endpoint::Server => self.server_inbox.push_back(msg),
            Endpoint::Client(p) => {
                let inbox = self.client_inbox.get_mut(p).ok_or_else(|| {
                    Error::Protocol(format!("no such client {p}"))
                })?;
                inbox.push_back(msg);
            }
        }
        Ok(())
    }

    pub fn recv(&mut self, at: Endpoint) -> Option<Message> {
        match at {
            Endpoint::Server => self.server_inbox.pop_front(),
            Endpoint::Client(p) => self.client_inbox.get_mut(p)?.pop_front(),
        }
    }
}

/// Accumulated count of real values uploaded to the server, by round.
#[derive(Debug, Clone, Default)]
pub struct CostMeter {
    per_round: Vec<u64>,
}

impl CostMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: u32, real_values: u64) {
        let idx = round as usize;
        if self.per_round.len() <= idx {
            self.per_round.resize(idx + 1, 0);
        }
        self.per_round[idx] += real_values;
    }

    pub fn round_cost(&self, round: u32) -> u64 {
        self.per_round.get(round as usize).copied().unwrap_or(0)
    }

    pub fn per_round(&self) -> &[u64] {
        &self.per_round
    }

    pub fn uplink_total(&self) -> u64 {
        self.per_round.iter().sum()
    }

    /// Total uploaded through the end of `round` (inclusive).
    pub fn cumulative_through(&self, round: u32) -> u64 {
        self.per_round
            .iter()
            .take(round as usize + 1)
            .sum()
    }
}

/// Uniform without-replacement sampler of `m` active clients per round;
/// keeps the drawn schedule for inspection.
#[derive(Debug)]
pub struct Participation {
    p: usize,
    m: usize,
    rng: Rng,
    schedule: Vec<Vec<usize>>,
}

impl Participation {
    pub fn new(p: usize, m: usize, rng: Rng) -> Result<Self> {
        if m == 0 || m > p {
            return Err(Error::BadSampleSize { m, p });
        }
        Ok(Self {
            p,
            m,
            rng,
            schedule: Vec::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Draws the next round's active set.
    pub fn draw(&mut self) -> Result<&[usize]> {
        let set = sample_without_replacement(self.p, self.m, &mut self.rng)?;
        self.schedule.push(set);
        Ok(self.schedule.last().unwrap())
    }

    pub fn schedule(&self) -> &[Vec<usize>] {
        &self.schedule
    }
}

/// Which closed-form communication-cost model applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModel {
    /// Clients upload full M x K models: `MK * P` per round.
    ModelAveraging,
    /// Active clients upload (K x K, M x K) differentials:
    /// `(MK + K²) * m` per round.
    GradientSharing,
}

/// Accumulated uplink cost after `s` rounds under the given model.
pub fn closed_form_cost(model: CostModel, m_dim: usize, k: usize, p_or_m: usize, s: u64) -> u64 {
    let per_client = match model {
        CostModel::ModelAveraging => (m_dim * k) as u64,
        CostModel::GradientSharing => (m_dim * k + k * k) as u64,
    };
    per_client * p_or_m as u64 * s
}

/// One-time uplink cost of initializing the gradient accumulators: every
/// client contributes its full (K x K, M x K) statistics once.
pub fn gds_bootstrap_cost(m_dim: usize, k: usize, p: usize) -> u64 {
    ((m_dim * k + k * k) * p) as u64
}

fn expect_upload_shape(body: &MessageBody, m_dim: usize, k: usize) -> Result<()> {
    match body {
        MessageBody::UploadW(w) => {
            if w.rows() != m_dim || w.cols() != k {
                return Err(Error::Protocol(format!(
                    "uploaded model is {}x{}, expected {m_dim}x{k}",
                    w.rows(),
                    w.cols()
                )));
            }
        }
        MessageBody::UploadDiff { u, v } => {
            if u.rows() != k || u.cols() != k || v.rows() != m_dim || v.cols() != k {
                return Err(Error::Protocol(format!(
                    "uploaded differential is {}x{} / {}x{}, expected {k}x{k} / {m_dim}x{k}",
                    u.rows(),
                    u.cols(),
                    v.rows(),
                    v.cols()
                )));
            }
        }
        MessageBody::BroadcastW(_) => {
            return Err(Error::Protocol("client sent a broadcast".into()))
        }
    }
    Ok(())
}

/// Executes one communication round: broadcast to the active set, per-client
/// work producing an upload, metered uplink delivery, then the server step.
///
/// `client_step` receives each active client's index and the model it was
/// sent; `server_step` receives the uploads as `(client, body)` pairs in
/// client-index order.
pub fn run_round<R>(
    transport: &mut InMemoryTransport,
    meter: &mut CostMeter,
    round: u32,
    broadcast_w: &Matrix,
    active: &[usize],
    client_step: &mut dyn FnMut(usize, &Matrix) -> Result<MessageBody>,
    server_step: &mut dyn FnMut(Vec<(usize, MessageBody)>) -> Result<R>,
) -> Result<R> {
    if active.is_empty() {
        return Err(Error::EmptyRound);
    }
    let (m_dim, k) = (broadcast_w.rows(), broadcast_w.cols());
    for &p in active {
        transport.send(
            Endpoint::Client(p),
            Message {
                round,
                sender: SERVER_ID,
                body: MessageBody::BroadcastW(broadcast_w.clone()),
            },
        )?;
    }
    for &p in active {
        let msg = transport
            .recv(Endpoint::Client(p))
            .ok_or_else(|| Error::Protocol(format!("client {p} received no broadcast")))?;
        let w = match msg.body {
            MessageBody::BroadcastW(w) if w.rows() == m_dim && w.cols() == k => w,
            other => {
                return Err(Error::Protocol(format!(
                    "client {p} received unexpected payload {:?}",
                    other.tag()
                )))
            }
        };
        let body = client_step(p, &w)?;
        transport.send(
            Endpoint::Server,
            Message {
                round,
                sender: p as u32,
                body,
            },
        )?;
    }
    let mut uploads = Vec::with_capacity(active.len());
    while let Some(msg) = transport.recv(Endpoint::Server) {
        expect_upload_shape(&msg.body, m_dim, k)?;
        meter.record(round, msg.body.real_value_count());
        uploads.push((msg.sender as usize, msg.body));
    }
    server_step(uploads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn w(m: usize, k: usize, fill: f64) -> Matrix {
        Matrix::from_fn(m, k, |_, _| fill)
    }

    #[test]
    fn message_sizes() {
        let b = MessageBody::BroadcastW(w(7, 3, 1.0));
        assert_eq!(b.real_value_count(), 21);
        let u = MessageBody::UploadW(w(7, 3, 1.0));
        assert_eq!(u.real_value_count(), 21);
        let d = MessageBody::UploadDiff {
            u: w(3, 3, 0.0),
            v: w(7, 3, 0.0),
        };
        assert_eq!(d.real_value_count(), 21 + 9);
    }

    #[test]
    fn wire_roundtrip() {
        let msgs = [
            Message {
                round: 3,
                sender: SERVER_ID,
                body: MessageBody::BroadcastW(w(4, 2, 0.25)),
            },
            Message {
                round: 9,
                sender: 5,
                body: MessageBody::UploadW(w(4, 2, -1.5)),
            },
            Message {
                round: 1,
                sender: 0,
                body: MessageBody::UploadDiff {
                    u: Matrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64),
                    v: Matrix::from_fn(4, 2, |i, j| (i * j) as f64 - 0.5),
                },
            },
        ];
        for m in msgs {
            let bytes = m.encode().unwrap();
            assert_eq!(Message::decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn wire_rejects_bad_input() {
        let good = Message {
            round: 1,
            sender: 2,
            body: MessageBody::UploadW(w(3, 2, 1.0)),
        }
        .encode()
        .unwrap();

        let mut bad_tag = good.clone();
        bad_tag[0] = 9;
        assert!(matches!(
            Message::decode(&bad_tag),
            Err(Error::FormatBadHeader(_))
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            Message::decode(truncated),
            Err(Error::FormatTruncated { .. })
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            Message::decode(&trailing),
            Err(Error::FormatMalformedValue(_))
        ));
    }

    #[test]
    fn closed_form_cost_examples() {
        assert_eq!(
            closed_form_cost(CostModel::ModelAveraging, 784, 10, 100, 5),
            3_920_000
        );
        assert_eq!(
            closed_form_cost(CostModel::GradientSharing, 784, 10, 10, 5),
            397_000
        );
        assert_eq!(closed_form_cost(CostModel::ModelAveraging, 784, 10, 100, 0), 0);
    }

    #[test]
    fn run_round_meters_model_average_uplink() {
        let mut transport = InMemoryTransport::new(3);
        let mut meter = CostMeter::new();
        let broadcast = w(6, 2, 0.5);
        let active = [0, 1, 2];
        let out: Vec<usize> = run_round(
            &mut transport,
            &mut meter,
            1,
            &broadcast,
            &active,
            &mut |p, recv| {
                assert_eq!(recv, &broadcast);
                Ok(MessageBody::UploadW(w(6, 2, p as f64)))
            },
            &mut |uploads| Ok(uploads.into_iter().map(|(p, _)| p).collect()),
        )
        .unwrap();
        assert_eq!(out, vec![0, 1, 2]);
        assert_eq!(meter.round_cost(1), 3 * 6 * 2);
        assert_eq!(
            meter.uplink_total(),
            closed_form_cost(CostModel::ModelAveraging, 6, 2, 3, 1)
        );
    }

    #[test]
    fn run_round_meters_differential_uplink() {
        let mut transport = InMemoryTransport::new(4);
        let mut meter = CostMeter::new();
        let broadcast = w(6, 2, 0.5);
        let active = [1, 3];
        run_round(
            &mut transport,
            &mut meter,
            1,
            &broadcast,
            &active,
            &mut |_, _| {
                Ok(MessageBody::UploadDiff {
                    u: w(2, 2, 0.0),
                    v: w(6, 2, 0.0),
                })
            },
            &mut |_| Ok(()),
        )
        .unwrap();
        assert_eq!(
            meter.uplink_total(),
            closed_form_cost(CostModel::GradientSharing, 6, 2, 2, 1)
        );
        // Inactive clients saw no traffic.
        assert!(transport.recv(Endpoint::Client(0)).is_none());
        assert!(transport.recv(Endpoint::Client(2)).is_none());
    }

    #[test]
    fn run_round_rejects_empty_active_set() {
        let mut transport = InMemoryTransport::new(2);
        let mut meter = CostMeter::new();
        let err = run_round::<()>(
            &mut transport,
            &mut meter,
            1,
            &w(3, 2, 0.0),
            &[],
            &mut |_, _| unreachable!(),
            &mut |_| unreachable!(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyRound));
    }

    #[test]
    fn run_round_rejects_shape_mismatch() {
        let mut transport = InMemoryTransport::new(1);
        let mut meter = CostMeter::new();
        let err = run_round::<()>(
            &mut transport,
            &mut meter,
            1,
            &w(3, 2, 0.0),
            &[0],
            &mut |_, _| Ok(MessageBody::UploadW(w(2, 2, 0.0))),
            &mut |_| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn participation_draws_distinct_sets() {
        let rng = Rng::for_stream(7, crate::linalg::StreamTag::Participation);
        let mut part = Participation::new(10, 4, rng).unwrap();
        for _ in 0..25 {
            let set = part.draw().unwrap().to_vec();
            assert_eq!(set.len(), 4);
            assert!(set.windows(2).all(|w| w[0] < w[1]));
            assert!(set.iter().all(|&p| p < 10));
        }
        assert_eq!(part.schedule().len(), 25);
        assert!(Participation::new(3, 4, Rng::from_seed(0)).is_err());
    }

    #[test]
    fn cost_meter_accumulates_by_round() {
        let mut meter = CostMeter::new();
        meter.record(0, 10);
        meter.record(1, 5);
        meter.record(1, 5);
        meter.record(3, 1);
        assert_eq!(meter.round_cost(1), 10);
        assert_eq!(meter.round_cost(2), 0);
        assert_eq!(meter.cumulative_through(1), 20);
        assert_eq!(meter.uplink_total(), 21);
    }
}
