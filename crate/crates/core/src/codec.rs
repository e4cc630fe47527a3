//! Over-the-air frame formats.
//!
//! Every frame starts with a type octet and an address-flags octet. In the
//! flags octet bit 7 (`D`) selects a 64-bit width for the first address field
//! and bit 6 (`O`) for the second ("originator") field; the remaining six bits
//! are reserved and must be zero. Multi-octet integers are big-endian and
//! locations travel as whole meters in two unsigned 16-bit fields.
//!
//! ```text
//! RREQ       type | flags | dest addr | dest (x,y) | orig addr | orig (x,y)
//! RREP       type | flags | responder | resp (x,y) | lqi | orig addr
//! RERR       type | flags | unreachable | orig addr
//! DATA       type | flags | hops_left | final dest | orig | seq | len | payload
//! ER beacon  type | flags | er addr | er (x,y)
//! ACK        type | flags | seq
//! HELLO      type | flags | addr
//! LOAD RREQ  RREQ fields | rreq_id | weak_links | hops
//! LOAD RREP  type | flags | dest addr | orig addr | rreq_id | weak_links | hops
//! ```

use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use thiserror::Error;

use crate::geo::Location;
use crate::link::{round_half_up, LqiValue};
use crate::node::NodeAddress;

/// Largest application payload carried in one DATA frame.
pub const MAX_PAYLOAD: usize = 81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PacketType {
    Rreq = 1,
    Rrep = 2,
    Rerr = 3,
    Data = 4,
    ErBeacon = 5,
    Ack = 6,
    Hello = 7,
    LoadRreq = 8,
    LoadRrep = 9,
}

impl PacketType {
    pub fn from_wire(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Rreq,
            2 => Self::Rrep,
            3 => Self::Rerr,
            4 => Self::Data,
            5 => Self::ErBeacon,
            6 => Self::Ack,
            7 => Self::Hello,
            8 => Self::LoadRreq,
            9 => Self::LoadRrep,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rreq => "rreq",
            Self::Rrep => "rrep",
            Self::Rerr => "rerr",
            Self::Data => "data",
            Self::ErBeacon => "er_beacon",
            Self::Ack => "ack",
            Self::Hello => "hello",
            Self::LoadRreq => "load_rreq",
            Self::LoadRrep => "load_rrep",
        }
    }

    /// Route-discovery and route-maintenance traffic, as opposed to DATA/ACK.
    pub fn is_control(&self) -> bool {
        !matches!(self, Self::Data | Self::Ack)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("unknown packet type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated frame: needed {needed} more byte(s) at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed flags octet 0x{0:02x}")]
    MalformedFlags(u8),
    #[error("{0} trailing byte(s) after a complete frame")]
    TrailingGarbage(usize),
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("coordinate ({x}, {y}) cannot be encoded in 16 bits")]
    LocationOutOfRange { x: f64, y: f64 },
}

/// The D/O flags octet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AddressFlags {
    pub d_extended: bool,
    pub o_extended: bool,
}

impl AddressFlags {
    const D: u8 = 0x80;
    const O: u8 = 0x40;

    pub fn for_addresses(d: Option<NodeAddress>, o: Option<NodeAddress>) -> Self {
        Self {
            d_extended: d.is_some_and(|a| a.is_extended()),
            o_extended: o.is_some_and(|a| a.is_extended()),
        }
    }

    pub fn to_octet(self) -> u8 {
        (if self.d_extended { Self::D } else { 0 }) | (if self.o_extended { Self::O } else { 0 })
    }

    pub fn from_octet(v: u8) -> Result<Self, CodecError> {
        if v & !(Self::D | Self::O) != 0 {
            return Err(CodecError::MalformedFlags(v));
        }
        Ok(Self {
            d_extended: v & Self::D != 0,
            o_extended: v & Self::O != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WireLocation {
    pub x_m: u16,
    pub y_m: u16,
}

impl WireLocation {
    pub fn from_location(loc: Location) -> Result<Self, CodecError> {
        let conv = |v: f64| {
            let r = round_half_up(v);
            (r.is_finite() && (0.0..=u16::MAX as f64).contains(&r)).then_some(r as u16)
        };
        match (conv(loc.x), conv(loc.y)) {
            (Some(x_m), Some(y_m)) => Ok(Self { x_m, y_m }),
            _ => Err(CodecError::LocationOutOfRange { x: loc.x, y: loc.y }),
        }
    }

    pub fn to_location(self) -> Location {
        Location::new(self.x_m as f64, self.y_m as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RreqPacket {
    pub dest_addr: NodeAddress,
    pub dest_loc: WireLocation,
    pub orig_addr: NodeAddress,
    pub orig_loc: WireLocation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RrepPacket {
    pub responder_addr: NodeAddress,
    pub responder_loc: WireLocation,
    pub link_lqi: LqiValue,
    pub orig_addr: NodeAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerrPacket {
    pub unreachable_addr: NodeAddress,
    pub orig_addr: NodeAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshHeader {
    pub hops_left: u8,
    pub final_dest: NodeAddress,
    pub orig: NodeAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPacket {
    pub mesh: MeshHeader,
    pub seq: u16,
    pub payload: Vec<u8>,
}

impl DataPacket {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErBeacon {
    pub er_addr: NodeAddress,
    pub er_loc: WireLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckPacket {
    pub seq: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloPacket {
    pub addr: NodeAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadRreqPacket {
    pub dest_addr: NodeAddress,
    pub dest_loc: WireLocation,
    pub orig_addr: NodeAddress,
    pub orig_loc: WireLocation,
    pub rreq_id: u16,
    pub weak_links: u8,
    pub hops: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadRrepPacket {
    pub dest_addr: NodeAddress,
    pub orig_addr: NodeAddress,
    pub rreq_id: u16,
    pub weak_links: u8,
    pub hops: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Rreq(RreqPacket),
    Rrep(RrepPacket),
    Rerr(RerrPacket),
    Data(DataPacket),
    ErBeacon(ErBeacon),
    Ack(AckPacket),
    Hello(HelloPacket),
    LoadRreq(LoadRreqPacket),
    LoadRrep(LoadRrepPacket),
}

impl Packet {
    pub fn packet_type(&self) -> PacketType {
        match self {
            Packet::Rreq(_) => PacketType::Rreq,
            Packet::Rrep(_) => PacketType::Rrep,
            Packet::Rerr(_) => PacketType::Rerr,
            Packet::Data(_) => PacketType::Data,
            Packet::ErBeacon(_) => PacketType::ErBeacon,
            Packet::Ack(_) => PacketType::Ack,
            Packet::Hello(_) => PacketType::Hello,
            Packet::LoadRreq(_) => PacketType::LoadRreq,
            Packet::LoadRrep(_) => PacketType::LoadRrep,
        }
    }

    pub fn flags(&self) -> AddressFlags {
        let (d, o) = match self {
            Packet::Rreq(p) => (Some(p.dest_addr), Some(p.orig_addr)),
            Packet::Rrep(p) => (Some(p.responder_addr), Some(p.orig_addr)),
            Packet::Rerr(p) => (Some(p.unreachable_addr), Some(p.orig_addr)),
            Packet::Data(p) => (Some(p.mesh.final_dest), Some(p.mesh.orig)),
            Packet::ErBeacon(p) => (Some(p.er_addr), None),
            Packet::Ack(_) => (None, None),
            Packet::Hello(p) => (Some(p.addr), None),
            Packet::LoadRreq(p) => (Some(p.dest_addr), Some(p.orig_addr)),
            Packet::LoadRrep(p) => (Some(p.dest_addr), Some(p.orig_addr)),
        };
        AddressFlags::for_addresses(d, o)
    }
}

fn addr_width(extended: bool) -> usize {
    if extended {
        8
    } else {
        2
    }
}

/// Exact encoded length of `packet`.
pub fn frame_size(packet: &Packet) -> Result<usize, CodecError> {
    let f = packet.flags();
    let d = addr_width(f.d_extended);
    let o = addr_width(f.o_extended);
    let body = match packet {
        Packet::Rreq(_) => d + 4 + o + 4,
        Packet::Rrep(_) => d + 4 + 1 + o,
        Packet::Rerr(_) => d + o,
        Packet::Data(p) => {
            if p.payload.len() > MAX_PAYLOAD {
                return Err(CodecError::Oversize(p.payload.len()));
            }
            1 + d + o + 2 + 1 + p.payload.len()
        }
        Packet::ErBeacon(_) => d + 4,
        Packet::Ack(_) => 2,
        Packet::Hello(_) => d,
        Packet::LoadRreq(_) => d + 4 + o + 4 + 2 + 1 + 1,
        Packet::LoadRrep(_) => d + o + 2 + 1 + 1,
    };
    Ok(2 + body)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn addr(&mut self, a: NodeAddress) {
        match a {
            NodeAddress::Short(v) => self.u16(v),
            NodeAddress::Extended(v) => self.0.extend_from_slice(&v.to_be_bytes()),
        }
    }
    fn loc(&mut self, l: WireLocation) {
        self.u16(l.x_m);
        self.u16(l.y_m);
    }
}

pub fn encode(packet: &Packet) -> Result<Vec<u8>, CodecError> {
    let size = frame_size(packet)?;
    let mut w = Writer(Vec::with_capacity(size));
    w.u8(packet.packet_type() as u8);
    w.u8(packet.flags().to_octet());
    match packet {
        Packet::Rreq(p) => {
            w.addr(p.dest_addr);
            w.loc(p.dest_loc);
            w.addr(p.orig_addr);
            w.loc(p.orig_loc);
        }
        Packet::Rrep(p) => {
            w.addr(p.responder_addr);
            w.loc(p.responder_loc);
            w.u8(p.link_lqi.raw());
            w.addr(p.orig_addr);
        }
        Packet::Rerr(p) => {
            w.addr(p.unreachable_addr);
            w.addr(p.orig_addr);
        }
        Packet::Data(p) => {
            w.u8(p.mesh.hops_left);
            w.addr(p.mesh.final_dest);
            w.addr(p.mesh.orig);
            w.u16(p.seq);
            w.u8(p.payload.len() as u8);
            w.0.extend_from_slice(&p.payload);
        }
        Packet::ErBeacon(p) => {
            w.addr(p.er_addr);
            w.loc(p.er_loc);
        }
        Packet::Ack(p) => w.u16(p.seq),
        Packet::Hello(p) => w.addr(p.addr),
        Packet::LoadRreq(p) => {
            w.addr(p.dest_addr);
            w.loc(p.dest_loc);
            w.addr(p.orig_addr);
            w.loc(p.orig_loc);
            w.u16(p.rreq_id);
            w.u8(p.weak_links);
            w.u8(p.hops);
        }
        Packet::LoadRrep(p) => {
            w.addr(p.dest_addr);
            w.addr(p.orig_addr);
            w.u16(p.rreq_id);
            w.u8(p.weak_links);
            w.u8(p.hops);
        }
    }
    debug_assert_eq!(w.0.len(), size);
    Ok(w.0)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(CodecError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
    fn addr(&mut self, extended: bool) -> Result<NodeAddress, CodecError> {
        if extended {
            let b = self.take(8)?;
            Ok(NodeAddress::Extended(u64::from_be_bytes(b.try_into().unwrap())))
        } else {
            Ok(NodeAddress::Short(self.u16()?))
        }
    }
    fn loc(&mut self) -> Result<WireLocation, CodecError> {
        Ok(WireLocation {
            x_m: self.u16()?,
            y_m: self.u16()?,
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Packet, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let ty = r.u8()?;
    let ty = PacketType::from_wire(ty).ok_or(CodecError::UnknownType(ty))?;
    let raw_flags = r.u8()?;
    let f = AddressFlags::from_octet(raw_flags)?;
    // Frames with fewer than two address fields must leave the unused bits clear.
    let unused_o = matches!(ty, PacketType::ErBeacon | PacketType::Hello | PacketType::Ack);
    if (unused_o && f.o_extended) || (ty == PacketType::Ack && f.d_extended) {
        return Err(CodecError::MalformedFlags(raw_flags));
    }
    let (d, o) = (f.d_extended, f.o_extended);
    let packet = match ty {
        PacketType::Rreq => Packet::Rreq(RreqPacket {
            dest_addr: r.addr(d)?,
            dest_loc: r.loc()?,
            orig_addr: r.addr(o)?,
            orig_loc: r.loc()?,
        }),
        PacketType::Rrep => Packet::Rrep(RrepPacket {
            responder_addr: r.addr(d)?,
            responder_loc: r.loc()?,
            link_lqi: LqiValue(r.u8()?),
            orig_addr: r.addr(o)?,
        }),
        PacketType::Rerr => Packet::Rerr(RerrPacket {
            unreachable_addr: r.addr(d)?,
            orig_addr: r.addr(o)?,
        }),
        PacketType::Data => {
            let hops_left = r.u8()?;
            let final_dest = r.addr(d)?;
            let orig = r.addr(o)?;
            let seq = r.u16()?;
            let len = r.u8()? as usize;
            if len > MAX_PAYLOAD {
                return Err(CodecError::Oversize(len));
            }
            let payload = r.take(len)?.to_vec();
            Packet::Data(DataPacket {
                mesh: MeshHeader {
                    hops_left,
                    final_dest,
                    orig,
                },
                seq,
                payload,
            })
        }
        PacketType::ErBeacon => Packet::ErBeacon(ErBeacon {
            er_addr: r.addr(d)?,
            er_loc: r.loc()?,
        }),
        PacketType::Ack => Packet::Ack(AckPacket { seq: r.u16()? }),
        PacketType::Hello => Packet::Hello(HelloPacket { addr: r.addr(d)? }),
        PacketType::LoadRreq => Packet::LoadRreq(LoadRreqPacket {
            dest_addr: r.addr(d)?,
            dest_loc: r.loc()?,
            orig_addr: r.addr(o)?,
            orig_loc: r.loc()?,
            rreq_id: r.u16()?,
            weak_links: r.u8()?,
            hops: r.u8()?,
        }),
        PacketType::LoadRrep => Packet::LoadRrep(LoadRrepPacket {
            dest_addr: r.addr(d)?,
            orig_addr: r.addr(o)?,
            rreq_id: r.u16()?,
            weak_links: r.u8()?,
            hops: r.u8()?,
        }),
    };
    let extra = bytes.len() - r.pos;
    if extra > 0 {
        return Err(CodecError::TrailingGarbage(extra));
    }
    Ok(packet)
}

fn loc_str(l: WireLocation) -> String {
    format!("({}, {})", l.x_m, l.y_m)
}

impl fmt::Display for Packet {
    /// Field table, one `name: value` pair per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flags = self.flags();
        let mut rows: Vec<(&str, String)> = vec![
            ("type", format!("{} ({})", self.packet_type().as_str(), self.packet_type() as u8)),
            ("d_flag", (flags.d_extended as u8).to_string()),
            ("o_flag", (flags.o_extended as u8).to_string()),
        ];
        match self {
            Packet::Rreq(p) => rows.extend([
                ("dest_addr", p.dest_addr.to_string()),
                ("dest_loc", loc_str(p.dest_loc)),
                ("orig_addr", p.orig_addr.to_string()),
                ("orig_loc", loc_str(p.orig_loc)),
            ]),
            Packet::Rrep(p) => rows.extend([
                ("responder_addr", p.responder_addr.to_string()),
                ("responder_loc", loc_str(p.responder_loc)),
                ("link_lqi", p.link_lqi.raw().to_string()),
                ("orig_addr", p.orig_addr.to_string()),
            ]),
            Packet::Rerr(p) => rows.extend([
                ("unreachable_addr", p.unreachable_addr.to_string()),
                ("orig_addr", p.orig_addr.to_string()),
            ]),
            Packet::Data(p) => {
                let mut hex = String::new();
                for b in &p.payload {
                    let _ = write!(hex, "{b:02x}");
                }
                rows.extend([
                    ("hops_left", p.mesh.hops_left.to_string()),
                    ("final_dest", p.mesh.final_dest.to_string()),
                    ("orig", p.mesh.orig.to_string()),
                    ("seq", p.seq.to_string()),
                    ("payload_len", p.payload.len().to_string()),
                    ("payload", hex),
                ])
            }
            Packet::ErBeacon(p) => rows.extend([
                ("er_addr", p.er_addr.to_string()),
                ("er_loc", loc_str(p.er_loc)),
            ]),
            Packet::Ack(p) => rows.push(("seq", p.seq.to_string())),
            Packet::Hello(p) => rows.push(("addr", p.addr.to_string())),
            Packet::LoadRreq(p) => rows.extend([
                ("dest_addr", p.dest_addr.to_string()),
                ("dest_loc", loc_str(p.dest_loc)),
                ("orig_addr", p.orig_addr.to_string()),
                ("orig_loc", loc_str(p.orig_loc)),
                ("rreq_id", p.rreq_id.to_string()),
                ("weak_links", p.weak_links.to_string()),
                ("hops", p.hops.to_string()),
            ]),
            Packet::LoadRrep(p) => rows.extend([
                ("dest_addr", p.dest_addr.to_string()),
                ("orig_addr", p.orig_addr.to_string()),
                ("rreq_id", p.rreq_id.to_string()),
                ("weak_links", p.weak_links.to_string()),
                ("hops", p.hops.to_string()),
            ]),
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows {
            writeln!(f, "{k:<width$}  {v}")?;
        }
        Ok(())
    }
}
