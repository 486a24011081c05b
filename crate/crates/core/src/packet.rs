//! Wire framing: `[type:1][src:2][dst:2][len:1][payload:len][mac:8]`, big-endian.

use std::fmt;

use thiserror::Error;

use crate::crypto::{self, KeyMaterial, MacTag, MAC_SIZE};
use crate::NodeId;

pub const HEADER_LEN: usize = 6;
pub const MAX_PAYLOAD: usize = 64;
pub const MAX_FRAME: usize = HEADER_LEN + MAX_PAYLOAD + MAC_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum PacketType {
    Hello = 0x01,
    Ack = 0x02,
    ClusterKey = 0x03,
    Data = 0x04,
    Help = 0x05,
    Alert = 0x06,
    Report = 0x07,
    GlobalRekey = 0x08,
}

impl PacketType {
    pub const ALL: [PacketType; 8] = [
        PacketType::Hello,
        PacketType::Ack,
        PacketType::ClusterKey,
        PacketType::Data,
        PacketType::Help,
        PacketType::Alert,
        PacketType::Report,
        PacketType::GlobalRekey,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            PacketType::Hello => "HELLO",
            PacketType::Ack => "ACK",
            PacketType::ClusterKey => "CLUSTER_KEY",
            PacketType::Data => "DATA",
            PacketType::Help => "HELP",
            PacketType::Alert => "ALERT",
            PacketType::Report => "REPORT",
            PacketType::GlobalRekey => "GLOBAL_REKEY",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for PacketType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated: {0} octets")]
    Truncated(usize),
    #[error("unknown packet type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload length {0} exceeds {MAX_PAYLOAD}")]
    PayloadTooLong(usize),
    #[error("frame length {got} does not match declared {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Packet {
    pub ptype: PacketType,
    pub src: NodeId,
    pub dst: NodeId,
    payload: Vec<u8>,
    pub mac: MacTag,
}

impl fmt::Debug for Packet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}->{} {} mac={:?})",
            self.ptype,
            self.src,
            self.dst,
            hex::encode(&self.payload),
            self.mac
        )
    }
}

impl Packet {
    /// Unauthenticated frame (zero MAC field).
    pub fn new(
        ptype: PacketType,
        src: NodeId,
        dst: NodeId,
        payload: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(payload.len()));
        }
        Ok(Packet {
            ptype,
            src,
            dst,
            payload,
            mac: MacTag::ZERO,
        })
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == NodeId::BROADCAST
    }

    /// Header and payload: the octets covered by the MAC.
    pub fn auth_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.push(self.ptype as u8);
        out.extend_from_slice(&self.src.0.to_be_bytes());
        out.extend_from_slice(&self.dst.0.to_be_bytes());
        out.push(self.payload.len() as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn signed(mut self, key: &KeyMaterial) -> Self {
        self.mac = crypto::mac(key, &self.auth_bytes());
        self
    }

    pub fn verify(&self, key: &KeyMaterial) -> bool {
        crypto::verify(key, &self.auth_bytes(), &self.mac)
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + MAC_SIZE
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.auth_bytes();
        out.extend_from_slice(self.mac.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN + MAC_SIZE {
            return Err(FrameError::Truncated(bytes.len()));
        }
        let ptype = PacketType::from_code(bytes[0]).ok_or(FrameError::UnknownType(bytes[0]))?;
        let src = NodeId(u16::from_be_bytes([bytes[1], bytes[2]]));
        let dst = NodeId(u16::from_be_bytes([bytes[3], bytes[4]]));
        let len = bytes[5] as usize;
        if len > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(len));
        }
        let expected = HEADER_LEN + len + MAC_SIZE;
        if bytes.len() != expected {
            return Err(FrameError::LengthMismatch {
                expected,
                got: bytes.len(),
            });
        }
        let payload = bytes[HEADER_LEN..HEADER_LEN + len].to_vec();
        let mut mac = [0u8; MAC_SIZE];
        mac.copy_from_slice(&bytes[HEADER_LEN + len..]);
        Ok(Packet {
            ptype,
            src,
            dst,
            payload,
            mac: MacTag::from_bytes(mac),
        })
    }
}

/// Big-endian readers over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    pub fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        self.take(n)
    }

    pub fn rest(&self) -> &'a [u8] {
        self.buf
    }
}
