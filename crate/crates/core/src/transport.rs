//! Point-to-point channels between the three parties, with byte and round
//! accounting.
//!
//! Every message travels in a frame: 4-byte LE payload length, 4-byte LE round
//! tag, payload. The round tag is a per-channel sequence number checked on
//! receipt. Payload bytes and header bytes are counted separately so measured
//! traffic maps directly onto ring elements sent.

use std::fmt;
use std::io::{self, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FRAME_HEADER_LEN: usize = 8;
/// Frames larger than this are rejected as malformed.
pub const MAX_FRAME_LEN: usize = 1 << 30;
pub const PROTOCOL_VERSION: u16 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PartyId(u8);

impl PartyId {
    pub const P1: PartyId = PartyId(1);
    pub const P2: PartyId = PartyId(2);
    pub const P3: PartyId = PartyId(3);
    pub const ALL: [PartyId; 3] = [PartyId::P1, PartyId::P2, PartyId::P3];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=3).contains(&id) {
            Ok(PartyId(id))
        } else {
            Err(Error::config(format!("party id {id} not in 1..=3")))
        }
    }

    pub fn from_index(i: usize) -> Self {
        PartyId((i % 3) as u8 + 1)
    }

    #[inline]
    pub fn id(self) -> u8 {
        self.0
    }

    /// Zero-based position, 0 for P1.
    #[inline]
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn next(self) -> Self {
        PartyId(1 + (self.0 % 3))
    }

    pub fn prev(self) -> Self {
        PartyId(1 + ((self.0 + 1) % 3))
    }
}

impl TryFrom<u8> for PartyId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        PartyId::new(v)
    }
}

impl From<PartyId> for u8 {
    fn from(p: PartyId) -> u8 {
        p.0
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub round_tag: u32,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.round_tag.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> std::result::Result<Self, ChannelError> {
        if frame.len() < FRAME_HEADER_LEN {
            return Err(ChannelError::Framing(format!(
                "frame of {} bytes is shorter than its header",
                frame.len()
            )));
        }
        let len = u32::from_le_bytes(frame[0..4].try_into().unwrap()) as usize;
        let round_tag = u32::from_le_bytes(frame[4..8].try_into().unwrap());
        if frame.len() - FRAME_HEADER_LEN != len {
            return Err(ChannelError::Framing(format!(
                "declared payload length {len} but frame carries {}",
                frame.len() - FRAME_HEADER_LEN
            )));
        }
        Ok(WireMessage {
            round_tag,
            payload: frame[FRAME_HEADER_LEN..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelError {
    Closed,
    Framing(String),
    Io(String),
}

/// One endpoint of a bidirectional ordered channel to a single peer.
pub trait Channel: Send {
    fn send(&mut self, msg: &WireMessage) -> std::result::Result<(), ChannelError>;

    /// Blocks until the next message arrives.
    fn recv(&mut self) -> std::result::Result<WireMessage, ChannelError>;

    /// Returns `Ok(None)` if nothing arrived within `timeout`.
    fn recv_timeout(
        &mut self,
        timeout: Duration,
    ) -> std::result::Result<Option<WireMessage>, ChannelError>;
}

/// In-process channel. Frames are passed as encoded bytes so both backends run
/// the same framing code.
pub struct LocalChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl LocalChannel {
    pub fn pair() -> (LocalChannel, LocalChannel) {
        let (tx_a, rx_a) = mpsc::channel();
        let (tx_b, rx_b) = mpsc::channel();
        (
            LocalChannel { tx: tx_a, rx: rx_b },
            LocalChannel { tx: tx_b, rx: rx_a },
        )
    }

    /// Injects raw bytes as if they were a frame; used to exercise the framing checks.
    pub fn send_raw(&mut self, bytes: Vec<u8>) -> std::result::Result<(), ChannelError> {
        self.tx.send(bytes).map_err(|_| ChannelError::Closed)
    }
}

impl Channel for LocalChannel {
    fn send(&mut self, msg: &WireMessage) -> std::result::Result<(), ChannelError> {
        self.tx.send(msg.encode()).map_err(|_| ChannelError::Closed)
    }

    fn recv(&mut self) -> std::result::Result<WireMessage, ChannelError> {
        let frame = self.rx.recv().map_err(|_| ChannelError::Closed)?;
        WireMessage::decode(&frame)
    }

    fn recv_timeout(
        &mut self,
        timeout: Duration,
    ) -> std::result::Result<Option<WireMessage>, ChannelError> {
        match self.rx.recv_timeout(timeout) {
            Ok(frame) => WireMessage::decode(&frame).map(Some),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Closed),
        }
    }
}

/// TCP channel. A reader thread drains the socket into a queue so that both
/// sides of a round can send before receiving without filling kernel buffers.
pub struct TcpChannel {
    writer: BufWriter<TcpStream>,
    rx: Receiver<std::result::Result<WireMessage, ChannelError>>,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let msg = read_frame(&mut reader);
            let stop = msg.is_err();
            if tx.send(msg).is_err() || stop {
                break;
            }
        });
        Ok(TcpChannel {
            writer: BufWriter::new(stream),
            rx,
        })
    }
}

fn read_frame(r: &mut impl Read) -> std::result::Result<WireMessage, ChannelError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(ChannelError::Closed),
        Err(e) => return Err(ChannelError::Io(e.to_string())),
    }
    let len = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let round_tag = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(ChannelError::Framing(format!(
            "frame length {len} exceeds limit {MAX_FRAME_LEN}"
        )));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ChannelError::Framing("connection closed inside a frame".into())
        } else {
            ChannelError::Io(e.to_string())
        }
    })?;
    Ok(WireMessage { round_tag, payload })
}

impl Channel for TcpChannel {
    fn send(&mut self, msg: &WireMessage) -> std::result::Result<(), ChannelError> {
        let io_err = |e: io::Error| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => ChannelError::Closed,
            _ => ChannelError::Io(e.to_string()),
        };
        self.writer
            .write_all(&(msg.payload.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        self.writer
            .write_all(&msg.round_tag.to_le_bytes())
            .map_err(io_err)?;
        self.writer.write_all(&msg.payload).map_err(io_err)?;
        self.writer.flush().map_err(io_err)
    }

    fn recv(&mut self) -> std::result::Result<WireMessage, ChannelError> {
        self.rx.recv().map_err(|_| ChannelError::Closed)?
    }

    fn recv_timeout(
        &mut self,
        timeout: Duration,
    ) -> std::result::Result<Option<WireMessage>, ChannelError> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => m.map(Some),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Closed),
        }
    }
}

impl Drop for TcpChannel {
    fn drop(&mut self) {
        let _ = self.writer.flush();
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerStats {
    /// Sum of payload lengths, headers excluded.
    pub bytes_sent: u64,
    pub frames: u64,
    pub header_bytes: u64,
    pub bytes_received: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    peers: [PeerStats; 3],
    pub rounds: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerStatsRecord {
    pub party: u8,
    pub peer: u8,
    pub bytes_sent: u64,
    pub frames: u64,
    pub rounds: u64,
}

impl CommStats {
    pub fn peer(&self, p: PartyId) -> &PeerStats {
        &self.peers[p.index()]
    }

    pub fn bytes_sent(&self) -> u64 {
        self.peers.iter().map(|p| p.bytes_sent).sum()
    }

    pub fn frames(&self) -> u64 {
        self.peers.iter().map(|p| p.frames).sum()
    }

    pub fn header_bytes(&self) -> u64 {
        self.peers.iter().map(|p| p.header_bytes).sum()
    }

    /// Counter growth since `earlier`.
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        let mut out = CommStats {
            rounds: self.rounds - earlier.rounds,
            ..Default::default()
        };
        for i in 0..3 {
            let (a, b) = (&self.peers[i], &earlier.peers[i]);
            out.peers[i] = PeerStats {
                bytes_sent: a.bytes_sent - b.bytes_sent,
                frames: a.frames - b.frames,
                header_bytes: a.header_bytes - b.header_bytes,
                bytes_received: a.bytes_received - b.bytes_received,
            };
        }
        out
    }

    pub fn records(&self, me: PartyId) -> Vec<PeerStatsRecord> {
        [me.next(), me.prev()]
            .into_iter()
            .map(|peer| {
                let s = self.peer(peer);
                PeerStatsRecord {
                    party: me.id(),
                    peer: peer.id(),
                    bytes_sent: s.bytes_sent,
                    frames: s.frames,
                    rounds: self.rounds,
                }
            })
            .collect()
    }
}

/// One party's view of the network: channels to the two other parties plus
/// instrumentation.
pub struct Network {
    me: PartyId,
    links: [Option<Box<dyn Channel>>; 3],
    send_seq: [u32; 3],
    recv_seq: [u32; 3],
    stats: CommStats,
    transcript: Sha256,
}

impl Network {
    pub fn new(me: PartyId, to_next: Box<dyn Channel>, to_prev: Box<dyn Channel>) -> Self {
        let mut links: [Option<Box<dyn Channel>>; 3] = [None, None, None];
        links[me.next().index()] = Some(to_next);
        links[me.prev().index()] = Some(to_prev);
        Network {
            me,
            links,
            send_seq: [0; 3],
            recv_seq: [0; 3],
            stats: CommStats::default(),
            transcript: Sha256::new(),
        }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn stats(&self) -> &CommStats {
        &self.stats
    }

    /// SHA-256 over every frame sent and received, in order.
    pub fn transcript_digest(&self) -> [u8; 32] {
        let d = self.transcript.clone().finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&d);
        out
    }

    fn link(&mut self, peer: PartyId) -> Result<&mut Box<dyn Channel>> {
        self.links[peer.index()]
            .as_mut()
            .ok_or_else(|| Error::transport(peer, "no channel to this party"))
    }

    fn absorb(&mut self, dir: u8, peer: PartyId, tag: u32, payload: &[u8]) {
        self.transcript.update([dir, peer.id()]);
        self.transcript.update(tag.to_le_bytes());
        self.transcript.update((payload.len() as u64).to_le_bytes());
        self.transcript.update(payload);
    }

    pub fn send(&mut self, peer: PartyId, payload: Vec<u8>) -> Result<()> {
        let tag = self.send_seq[peer.index()];
        let msg = WireMessage {
            round_tag: tag,
            payload,
        };
        let res = self.link(peer)?.send(&msg);
        res.map_err(|e| channel_error(peer, e))?;
        self.send_seq[peer.index()] += 1;
        let s = &mut self.stats.peers[peer.index()];
        s.bytes_sent += msg.payload.len() as u64;
        s.frames += 1;
        s.header_bytes += FRAME_HEADER_LEN as u64;
        self.absorb(b'S', peer, tag, &msg.payload);
        Ok(())
    }

    pub fn recv(&mut self, peer: PartyId) -> Result<Vec<u8>> {
        let res = self.link(peer)?.recv();
        let msg = res.map_err(|e| channel_error(peer, e))?;
        self.accept(peer, msg)
    }

    pub fn recv_timeout(&mut self, peer: PartyId, timeout: Duration) -> Result<Option<Vec<u8>>> {
        let res = self.link(peer)?.recv_timeout(timeout);
        match res.map_err(|e| channel_error(peer, e))? {
            Some(msg) => self.accept(peer, msg).map(Some),
            None => Ok(None),
        }
    }

    fn accept(&mut self, peer: PartyId, msg: WireMessage) -> Result<Vec<u8>> {
        let expect = self.recv_seq[peer.index()];
        if msg.round_tag != expect {
            return Err(Error::Framing(format!(
                "out-of-order frame from {peer}: tag {} expected {expect}",
                msg.round_tag
            )));
        }
        self.recv_seq[peer.index()] += 1;
        self.stats.peers[peer.index()].bytes_received += msg.payload.len() as u64;
        self.absorb(b'R', peer, msg.round_tag, &msg.payload);
        Ok(msg.payload)
    }

    /// Symmetric one-round step with a single peer.
    pub fn exchange(&mut self, peer: PartyId, payload: Vec<u8>) -> Result<Vec<u8>> {
        self.send(peer, payload)?;
        let got = self.recv(peer)?;
        self.stats.rounds += 1;
        Ok(got)
    }

    /// One synchronous round: all sends, then the receives in the given order.
    /// Counts as exactly one round for this party.
    pub fn round(
        &mut self,
        sends: Vec<(PartyId, Vec<u8>)>,
        recvs: &[PartyId],
    ) -> Result<Vec<Vec<u8>>> {
        for (peer, payload) in sends {
            self.send(peer, payload)?;
        }
        let mut out = Vec::with_capacity(recvs.len());
        for &peer in recvs {
            out.push(self.recv(peer)?);
        }
        self.stats.rounds += 1;
        Ok(out)
    }
}

fn channel_error(peer: PartyId, e: ChannelError) -> Error {
    match e {
        ChannelError::Closed => Error::transport(peer, "peer closed the channel"),
        ChannelError::Framing(m) => Error::Framing(format!("from {peer}: {m}")),
        ChannelError::Io(m) => Error::transport(peer, m),
    }
}

/// Three fully connected in-process networks, indexed by party.
pub fn local_mesh() -> [Network; 3] {
    // links[i][j]: endpoint held by party i towards party j
    let (a12, a21) = LocalChannel::pair();
    let (a23, a32) = LocalChannel::pair();
    let (a31, a13) = LocalChannel::pair();
    [
        Network::new(PartyId::P1, Box::new(a12), Box::new(a13)),
        Network::new(PartyId::P2, Box::new(a23), Box::new(a21)),
        Network::new(PartyId::P3, Box::new(a31), Box::new(a32)),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Handshake {
    pub party: PartyId,
    pub ring_bits: u32,
    pub version: u16,
}

impl Handshake {
    fn encode(&self) -> [u8; 4] {
        let v = self.version.to_le_bytes();
        [self.party.id(), self.ring_bits as u8, v[0], v[1]]
    }

    fn decode(b: [u8; 4]) -> Result<Self> {
        Ok(Handshake {
            party: PartyId::new(b[0])?,
            ring_bits: b[1] as u32,
            version: u16::from_le_bytes([b[2], b[3]]),
        })
    }

    fn check_peer(&self, peer: &Handshake, expected: Option<PartyId>) -> Result<()> {
        if let Some(e) = expected {
            if peer.party != e {
                return Err(Error::config(format!(
                    "handshake: expected {e}, peer claims {}",
                    peer.party
                )));
            }
        }
        if peer.party == self.party {
            return Err(Error::config(format!(
                "handshake: peer claims our own id {}",
                self.party
            )));
        }
        if peer.ring_bits != self.ring_bits {
            return Err(Error::config(format!(
                "handshake with {}: ring width {} != local {}",
                peer.party, peer.ring_bits, self.ring_bits
            )));
        }
        if peer.version != self.version {
            return Err(Error::config(format!(
                "handshake with {}: protocol version {} != local {}",
                peer.party, peer.version, self.version
            )));
        }
        Ok(())
    }
}

fn handshake(stream: &mut TcpStream, me: &Handshake, expected: Option<PartyId>) -> Result<Handshake> {
    let peer_hint = expected.unwrap_or(me.party);
    stream
        .write_all(&me.encode())
        .map_err(|e| Error::transport(peer_hint, e.to_string()))?;
    let mut buf = [0u8; 4];
    stream
        .read_exact(&mut buf)
        .map_err(|e| Error::transport(peer_hint, format!("handshake: {e}")))?;
    let peer = Handshake::decode(buf)?;
    me.check_peer(&peer, expected)?;
    Ok(peer)
}

/// Connects party `me` to the other two over TCP. Party j dials every party
/// with a smaller id and accepts connections from larger ids; `listener` must
/// be bound to `addrs[me]`.
pub fn connect_tcp(
    listener: TcpListener,
    addrs: &[SocketAddr; 3],
    local: Handshake,
    timeout: Duration,
) -> Result<Network> {
    let me = local.party;
    let deadline = Instant::now() + timeout;
    let mut streams: [Option<TcpStream>; 3] = [None, None, None];

    for peer in PartyId::ALL.into_iter().filter(|p| p.id() < me.id()) {
        let mut stream = loop {
            match TcpStream::connect(addrs[peer.index()]) {
                Ok(s) => break s,
                Err(e) => {
                    if Instant::now() >= deadline {
                        return Err(Error::transport(peer, format!("connect: {e}")));
                    }
                    thread::sleep(Duration::from_millis(20));
                }
            }
        };
        handshake(&mut stream, &local, Some(peer))?;
        streams[peer.index()] = Some(stream);
    }

    let expected_accepts = PartyId::ALL.iter().filter(|p| p.id() > me.id()).count();
    listener.set_nonblocking(true)?;
    let mut accepted = 0;
    while accepted < expected_accepts {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                let peer = handshake(&mut stream, &local, None)?;
                if peer.party.id() < me.id() || streams[peer.party.index()].is_some() {
                    return Err(Error::config(format!(
                        "unexpected connection from {}",
                        peer.party
                    )));
                }
                streams[peer.party.index()] = Some(stream);
                accepted += 1;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing = PartyId::ALL
                        .into_iter()
                        .find(|p| p.id() > me.id() && streams[p.index()].is_none())
                        .unwrap_or(me);
                    return Err(Error::transport(missing, "timed out waiting for connection"));
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }

    let take = |s: &mut [Option<TcpStream>; 3], p: PartyId| -> Result<Box<dyn Channel>> {
        let stream = s[p.index()].take().expect("all peers connected");
        Ok(Box::new(TcpChannel::new(stream)?))
    };
    let next = take(&mut streams, me.next())?;
    let prev = take(&mut streams, me.prev())?;
    Ok(Network::new(me, next, prev))
}

/// Three networks over loopback TCP on ephemeral ports; for tests and
/// single-host runs.
pub fn loopback_tcp_mesh(ring_bits: u32) -> Result<[Network; 3]> {
    let listeners = [
        TcpListener::bind("127.0.0.1:0")?,
        TcpListener::bind("127.0.0.1:0")?,
        TcpListener::bind("127.0.0.1:0")?,
    ];
    let addrs = [
        listeners[0].local_addr()?,
        listeners[1].local_addr()?,
        listeners[2].local_addr()?,
    ];
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            thread::spawn(move || {
                connect_tcp(
                    l,
                    &addrs,
                    Handshake {
                        party: PartyId::from_index(i),
                        ring_bits,
                        version: PROTOCOL_VERSION,
                    },
                    Duration::from_secs(10),
                )
            })
        })
        .collect();
    let mut nets = Vec::with_capacity(3);
    for h in handles {
        nets.push(h.join().expect("connect thread panicked")?);
    }
    let [a, b, c]: [Network; 3] = nets.try_into().ok().unwrap();
    Ok([a, b, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn party_index_wraps() {
        assert_eq!(PartyId::P1.next(), PartyId::P2);
        assert_eq!(PartyId::P3.next(), PartyId::P1);
        assert_eq!(PartyId::P1.prev(), PartyId::P3);
        assert_eq!(PartyId::P2.prev(), PartyId::P1);
        assert!(PartyId::new(0).is_err());
        assert!(PartyId::new(4).is_err());
    }

    #[test]
    fn send_counts_payload_bytes_only() {
        let [mut a, mut b, _c] = local_mesh();
        a.send(PartyId::P2, vec![7u8; 24]).unwrap();
        assert_eq!(a.stats().peer(PartyId::P2).bytes_sent, 24);
        assert_eq!(a.stats().header_bytes(), FRAME_HEADER_LEN as u64);
        assert_eq!(b.recv(PartyId::P1).unwrap(), vec![7u8; 24]);
    }

    #[test]
    fn fifo_per_channel() {
        let [mut a, mut b, _c] = local_mesh();
        a.send(PartyId::P2, b"first".to_vec()).unwrap();
        a.send(PartyId::P2, b"second".to_vec()).unwrap();
        assert_eq!(b.recv(PartyId::P1).unwrap(), b"first");
        assert_eq!(b.recv(PartyId::P1).unwrap(), b"second");
    }

    #[test]
    fn recv_on_empty_channel_blocks() {
        let [_a, mut b, _c] = local_mesh();
        let got = b
            .recv_timeout(PartyId::P1, Duration::from_millis(50))
            .unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn exchange_counts_one_round() {
        let [mut a, mut b, _c] = local_mesh();
        let h = thread::spawn(move || {
            let got = b.exchange(PartyId::P1, b"b".to_vec()).unwrap();
            (got, b.stats().rounds)
        });
        let got = a.exchange(PartyId::P2, b"a".to_vec()).unwrap();
        let (got_b, rounds_b) = h.join().unwrap();
        assert_eq!(got, b"b");
        assert_eq!(got_b, b"a");
        assert_eq!(a.stats().rounds, 1);
        assert_eq!(rounds_b, 1);
    }

    #[test]
    fn n_exchanges_n_rounds() {
        let [mut a, mut b, _c] = local_mesh();
        let h = thread::spawn(move || {
            for i in 0..17u8 {
                b.exchange(PartyId::P1, vec![i]).unwrap();
            }
        });
        for i in 0..17u8 {
            assert_eq!(a.exchange(PartyId::P2, vec![i]).unwrap(), vec![i]);
        }
        h.join().unwrap();
        assert_eq!(a.stats().rounds, 17);
    }

    #[test]
    fn closed_peer_is_transport_error() {
        let [mut a, b, c] = local_mesh();
        drop(b);
        drop(c);
        match a.recv(PartyId::P2) {
            Err(Error::Transport { peer, .. }) => assert_eq!(peer, PartyId::P2),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert!(matches!(
            a.send(PartyId::P3, vec![1]),
            Err(Error::Transport { .. })
        ));
    }

    #[test]
    fn malformed_frame_is_framing_error() {
        let (mut raw, end) = LocalChannel::pair();
        let (x, _y) = LocalChannel::pair();
        let mut net = Network::new(PartyId::P1, Box::new(end), Box::new(x));
        // declares 10 bytes, carries 3
        let mut bad = 10u32.to_le_bytes().to_vec();
        bad.extend_from_slice(&0u32.to_le_bytes());
        bad.extend_from_slice(&[1, 2, 3]);
        raw.send_raw(bad).unwrap();
        assert!(matches!(net.recv(PartyId::P2), Err(Error::Framing(_))));
    }

    #[test]
    fn out_of_order_tag_is_framing_error() {
        let (mut raw, end) = LocalChannel::pair();
        let (x, _y) = LocalChannel::pair();
        let mut net = Network::new(PartyId::P1, Box::new(end), Box::new(x));
        raw.send(&WireMessage {
            round_tag: 5,
            payload: vec![],
        })
        .unwrap();
        assert!(matches!(net.recv(PartyId::P2), Err(Error::Framing(_))));
    }

    #[test]
    fn handshake_rejects_ring_mismatch() {
        let listeners: Vec<_> = (0..3)
            .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
            .collect();
        let addrs: [SocketAddr; 3] = [
            listeners[0].local_addr().unwrap(),
            listeners[1].local_addr().unwrap(),
            listeners[2].local_addr().unwrap(),
        ];
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                thread::spawn(move || {
                    connect_tcp(
                        l,
                        &addrs,
                        Handshake {
                            party: PartyId::from_index(i),
                            ring_bits: if i == 2 { 64 } else { 72 },
                            version: PROTOCOL_VERSION,
                        },
                        Duration::from_secs(2),
                    )
                    .map(|_| ())
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(results.iter().any(|r| matches!(r, Err(Error::Config(_)))));
    }
}
