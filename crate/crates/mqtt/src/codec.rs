//! MQTT 3.1.1 packet codec for the subset used here: QoS 0/1, exact topics.

use thiserror::Error;

/// Largest value the remaining-length varint can carry.
pub const MAX_REMAINING_LENGTH: u32 = 268_435_455;
/// Publish payload cap.
pub const MAX_PAYLOAD: usize = 256 * 1024;
/// Remaining-length cap: a maximal payload plus room for any topic.
const MAX_PACKET_BODY: u32 = (MAX_PAYLOAD + 2 + u16::MAX as usize + 2) as u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("publish topic must be non-empty and free of wildcards: {0:?}")]
    BadTopic(String),
    #[error("string field longer than 65535 bytes")]
    StringTooLong,
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte cap")]
    PayloadTooLarge(usize),
    #[error("packet id must be present (and non-zero) exactly when qos is 1")]
    PacketId,
    #[error("subscribe and suback need at least one entry")]
    Empty,
    #[error("remaining length {0} out of range")]
    Length(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("remaining length uses more than 4 bytes")]
    OverlongLength,
    #[error("invalid packet type {0}")]
    BadType(u8),
    #[error("invalid flags {flags:#06b} for packet type {kind}")]
    BadFlags { kind: u8, flags: u8 },
    #[error("qos {0} is not supported")]
    UnsupportedQos(u8),
    #[error("unsupported protocol {name:?} level {level}")]
    UnsupportedProtocol { name: String, level: u8 },
    #[error("invalid UTF-8 string")]
    BadUtf8,
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("packet body of {0} bytes is too large")]
    TooLarge(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum QoS {
    #[default]
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn from_u8(v: u8) -> Result<QoS, ProtocolError> {
        match v {
            0 => Ok(QoS::AtMostOnce),
            1 => Ok(QoS::AtLeastOnce),
            v => Err(ProtocolError::UnsupportedQos(v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub keep_alive: u16,
    pub clean_session: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Connack {
    pub session_present: bool,
    /// 0 = accepted; 1..=5 are the standard refusals.
    pub return_code: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub packet_id: Option<u16>,
    pub dup: bool,
    pub retain: bool,
}

impl Publish {
    pub fn new(topic: impl Into<String>, payload: impl Into<Vec<u8>>, qos: QoS) -> Self {
        Self { topic: topic.into(), payload: payload.into(), qos, packet_id: None, dup: false, retain: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubackCode {
    Granted(QoS),
    Failure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    Connack(Connack),
    Publish(Publish),
    Puback { packet_id: u16 },
    Subscribe { packet_id: u16, filters: Vec<(String, QoS)> },
    Suback { packet_id: u16, codes: Vec<SubackCode> },
    Pingreq,
    Pingresp,
    Disconnect,
}

impl Packet {
    pub fn kind(&self) -> &'static str {
        match self {
            Packet::Connect(_) => "CONNECT",
            Packet::Connack(_) => "CONNACK",
            Packet::Publish(_) => "PUBLISH",
            Packet::Puback { .. } => "PUBACK",
            Packet::Subscribe { .. } => "SUBSCRIBE",
            Packet::Suback { .. } => "SUBACK",
            Packet::Pingreq => "PINGREQ",
            Packet::Pingresp => "PINGRESP",
            Packet::Disconnect => "DISCONNECT",
        }
    }
}

/// Outcome of decoding from the front of a buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decoded {
    /// A packet and the number of bytes it used.
    Packet(Packet, usize),
    /// The buffer holds a prefix; at least this many bytes in total are needed.
    NeedMore(usize),
}

pub fn encode_remaining_length(mut value: u32, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    if value > MAX_REMAINING_LENGTH {
        return Err(EncodeError::Length(value as u64));
    }
    loop {
        let mut byte = (value % 128) as u8;
        value /= 128;
        if value > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if value == 0 {
            return Ok(());
        }
    }
}

/// Decodes a remaining length from `buf`; `Ok(None)` when more bytes are needed.
pub fn decode_remaining_length(buf: &[u8]) -> Result<Option<(u32, usize)>, ProtocolError> {
    let mut value = 0u32;
    for (i, &byte) in buf.iter().take(4).enumerate() {
        value |= ((byte & 0x7f) as u32) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
    }
    if buf.len() >= 4 {
        Err(ProtocolError::OverlongLength)
    } else {
        Ok(None)
    }
}

fn valid_publish_topic(t: &str) -> bool {
    !t.is_empty() && !t.contains(['+', '#']) && !t.contains('\0')
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), EncodeError> {
    put_bytes(out, s.as_bytes())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<(), EncodeError> {
    let len = u16::try_from(b.len()).map_err(|_| EncodeError::StringTooLong)?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(b);
    Ok(())
}

fn nonzero(id: u16) -> Result<u16, EncodeError> {
    if id == 0 {
        Err(EncodeError::PacketId)
    } else {
        Ok(id)
    }
}

pub fn encode(packet: &Packet) -> Result<Vec<u8>, EncodeError> {
    let mut body = Vec::new();
    let header: u8 = match packet {
        Packet::Connect(c) => {
            put_str(&mut body, "MQTT")?;
            body.push(4);
            body.push(if c.clean_session { 0x02 } else { 0 });
            body.extend_from_slice(&c.keep_alive.to_be_bytes());
            put_str(&mut body, &c.client_id)?;
            0x10
        }
        Packet::Connack(c) => {
            body.push(c.session_present as u8);
            body.push(c.return_code);
            0x20
        }
        Packet::Publish(p) => {
            if !valid_publish_topic(&p.topic) {
                return Err(EncodeError::BadTopic(p.topic.clone()));
            }
            if p.payload.len() > MAX_PAYLOAD {
                return Err(EncodeError::PayloadTooLarge(p.payload.len()));
            }
            put_str(&mut body, &p.topic)?;
            match (p.qos, p.packet_id) {
                (QoS::AtMostOnce, None) => {}
                (QoS::AtLeastOnce, Some(id)) => body.extend_from_slice(&nonzero(id)?.to_be_bytes()),
                _ => return Err(EncodeError::PacketId),
            }
            body.extend_from_slice(&p.payload);
            0x30 | (p.dup as u8) << 3 | (p.qos as u8) << 1 | p.retain as u8
        }
        Packet::Puback { packet_id } => {
            body.extend_from_slice(&nonzero(*packet_id)?.to_be_bytes());
            0x40
        }
        Packet::Subscribe { packet_id, filters } => {
            if filters.is_empty() {
                return Err(EncodeError::Empty);
            }
            body.extend_from_slice(&nonzero(*packet_id)?.to_be_bytes());
            for (f, q) in filters {
                if f.is_empty() {
                    return Err(EncodeError::BadTopic(f.clone()));
                }
                put_str(&mut body, f)?;
                body.push(*q as u8);
            }
            0x82
        }
        Packet::Suback { packet_id, codes } => {
            if codes.is_empty() {
                return Err(EncodeError::Empty);
            }
            body.extend_from_slice(&nonzero(*packet_id)?.to_be_bytes());
            body.extend(codes.iter().map(|c| match c {
                SubackCode::Granted(q) => *q as u8,
                SubackCode::Failure => 0x80,
            }));
            0x90
        }
        Packet::Pingreq => 0xC0,
        Packet::Pingresp => 0xD0,
        Packet::Disconnect => 0xE0,
    };
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(header);
    encode_remaining_length(u32::try_from(body.len()).map_err(|_| EncodeError::Length(body.len() as u64))?, &mut out)?;
    out.extend_from_slice(&body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        let (&b, rest) = self.buf.split_first().ok_or(ProtocolError::Malformed("truncated body"))?;
        self.buf = rest;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self) -> Result<&'a [u8], ProtocolError> {
        let len = self.u16()? as usize;
        if self.buf.len() < len {
            return Err(ProtocolError::Malformed("string runs past the packet"));
        }
        let (b, rest) = self.buf.split_at(len);
        self.buf = rest;
        Ok(b)
    }

    fn string(&mut self) -> Result<String, ProtocolError> {
        let s = std::str::from_utf8(self.bytes()?).map_err(|_| ProtocolError::BadUtf8)?;
        if s.contains('\0') {
            return Err(ProtocolError::BadUtf8);
        }
        Ok(s.to_owned())
    }

    fn packet_id(&mut self) -> Result<u16, ProtocolError> {
        match self.u16()? {
            0 => Err(ProtocolError::Malformed("packet id 0")),
            id => Ok(id),
        }
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed("trailing bytes"))
        }
    }
}

/// Decodes one packet from the front of `buf`. Total on arbitrary input.
pub fn decode(buf: &[u8]) -> Result<Decoded, ProtocolError> {
    if buf.len() < 2 {
        return Ok(Decoded::NeedMore(2));
    }
    let Some((len, len_bytes)) = decode_remaining_length(&buf[1..])? else {
        return Ok(Decoded::NeedMore(buf.len() + 1));
    };
    let kind = buf[0] >> 4;
    let flags = buf[0] & 0x0f;
    let expected_flags = match kind {
        1 | 2 | 4 | 9 | 12 | 13 | 14 => Some(0),
        8 => Some(0b0010),
        3 => None,
        0 | 15 => return Err(ProtocolError::BadType(kind)),
        // valid MQTT types outside the supported subset
        _ => return Err(ProtocolError::BadType(kind)),
    };
    if expected_flags.is_some_and(|f| f != flags) {
        return Err(ProtocolError::BadFlags { kind, flags });
    }
    if len > MAX_PACKET_BODY {
        return Err(ProtocolError::TooLarge(len));
    }
    let total = 1 + len_bytes + len as usize;
    if buf.len() < total {
        return Ok(Decoded::NeedMore(total));
    }
    let mut r = Reader { buf: &buf[1 + len_bytes..total] };
    let packet = match kind {
        1 => {
            let name = r.string()?;
            let level = r.u8()?;
            if name != "MQTT" || level != 4 {
                return Err(ProtocolError::UnsupportedProtocol { name, level });
            }
            let cflags = r.u8()?;
            if cflags & 0x01 != 0 {
                return Err(ProtocolError::Malformed("reserved connect flag set"));
            }
            let keep_alive = r.u16()?;
            let client_id = r.string()?;
            // will, username and password are accepted and ignored
            if cflags & 0x04 != 0 {
                r.string()?;
                r.bytes()?;
            } else if cflags & 0x38 != 0 {
                return Err(ProtocolError::Malformed("will qos or retain without will flag"));
            }
            if cflags & 0x80 != 0 {
                r.string()?;
            }
            if cflags & 0x40 != 0 {
                r.bytes()?;
            }
            r.finish()?;
            Packet::Connect(Connect { client_id, keep_alive, clean_session: cflags & 0x02 != 0 })
        }
        2 => {
            let ack = r.u8()?;
            if ack & 0xfe != 0 {
                return Err(ProtocolError::Malformed("reserved connack flags"));
            }
            let return_code = r.u8()?;
            r.finish()?;
            Packet::Connack(Connack { session_present: ack == 1, return_code })
        }
        3 => {
            let qos = QoS::from_u8((flags >> 1) & 0x03)?;
            let dup = flags & 0x08 != 0;
            if dup && qos == QoS::AtMostOnce {
                return Err(ProtocolError::Malformed("dup set on qos 0 publish"));
            }
            let topic = r.string()?;
            if !valid_publish_topic(&topic) {
                return Err(ProtocolError::Malformed("invalid publish topic"));
            }
            let packet_id = match qos {
                QoS::AtMostOnce => None,
                QoS::AtLeastOnce => Some(r.packet_id()?),
            };
            if r.buf.len() > MAX_PAYLOAD {
                return Err(ProtocolError::TooLarge(len));
            }
            Packet::Publish(Publish { topic, payload: r.buf.to_vec(), qos, packet_id, dup, retain: flags & 0x01 != 0 })
        }
        4 => {
            let packet_id = r.packet_id()?;
            r.finish()?;
            Packet::Puback { packet_id }
        }
        8 => {
            let packet_id = r.packet_id()?;
            let mut filters = Vec::new();
            while !r.buf.is_empty() {
                let f = r.string()?;
                if f.is_empty() {
                    return Err(ProtocolError::Malformed("empty topic filter"));
                }
                let q = r.u8()?;
                if q & 0xfc != 0 {
                    return Err(ProtocolError::Malformed("reserved subscribe bits"));
                }
                filters.push((f, QoS::from_u8(q)?));
            }
            if filters.is_empty() {
                return Err(ProtocolError::Malformed("subscribe without filters"));
            }
            Packet::Subscribe { packet_id, filters }
        }
        9 => {
            let packet_id = r.packet_id()?;
            let mut codes = Vec::new();
            while !r.buf.is_empty() {
                codes.push(match r.u8()? {
                    0x80 => SubackCode::Failure,
                    q => SubackCode::Granted(QoS::from_u8(q)?),
                });
            }
            if codes.is_empty() {
                return Err(ProtocolError::Malformed("suback without codes"));
            }
            Packet::Suback { packet_id, codes }
        }
        12 | 13 | 14 => {
            if len != 0 {
                return Err(ProtocolError::Malformed("fixed-header-only packet with a body"));
            }
            match kind {
                12 => Packet::Pingreq,
                13 => Packet::Pingresp,
                _ => Packet::Disconnect,
            }
        }
        _ => unreachable!("type checked above"),
    };
    Ok(Decoded::Packet(packet, total))
}
