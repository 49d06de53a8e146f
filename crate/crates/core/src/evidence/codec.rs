//! Canonical byte encoding of signed messages.
//!
//! All integers are big-endian. A message is
//!
//! ```text
//! signer u32 | tag u8 | instance kind u8 | instance index u32 | round u32
//! payload
//! sig_len u16 | signature
//! ```
//!
//! Payload layouts by tag:
//!
//! ```text
//! INIT, ECHO_RB   value u64
//! READY_RB        value u64 | cert
//! EST, BVECHO     bit u8 | opt_cert
//! BVREADY         bit u8 | opt_cert | cert
//! COORD           bit u8
//! ECHO_BC         aux bitmask u8 (bit0 = 0, bit1 = 1)
//! DECIDE          bit u8 | cert
//! POFS            count u32 | count × (culprit u32 | msg | msg)
//! RELAY           count u32 | count × msg
//!
//! cert      claim kind u8 | instance kind u8 | index u32 | round u32 | value u64
//!           | count u32 | count × msg
//! opt_cert  0u8 | 1u8 cert
//! msg       len u32 | encoded message
//! ```

use std::sync::Arc;

use thiserror::Error;

use super::certificate::{Certificate, Claim, ClaimKind};
use super::message::{InstanceId, Msg, Payload, SignedMessage, Tag};
use super::pof::ProofOfFraud;
use crate::model::{BinSet, Bit, ProcessId};

const CERT_HEADER_LEN: usize = 1 + 1 + 4 + 4 + 8 + 4;
const MAX_DEPTH: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("bad instance id kind={0} index={1}")]
    BadInstance(u8, u32),
    #[error("bad claim kind {0}")]
    BadClaim(u8),
    #[error("bad binary value {0}")]
    BadBit(u8),
    #[error("bad aux set {0:#x}")]
    BadAux(u8),
    #[error("bad option flag {0}")]
    BadFlag(u8),
    #[error("nesting deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

fn embedded_len(m: &Msg) -> usize {
    4 + m.wire_len() as usize
}

fn cert_len(c: &Certificate) -> usize {
    CERT_HEADER_LEN + c.votes.iter().map(embedded_len).sum::<usize>()
}

fn opt_cert_len(c: &Option<Certificate>) -> usize {
    1 + c.as_ref().map_or(0, cert_len)
}

/// Encoded payload length, computed without encoding.
pub(crate) fn payload_wire_len(p: &Payload) -> usize {
    match p {
        Payload::Init { .. } | Payload::EchoRb { .. } => 8,
        Payload::ReadyRb { cert, .. } => 8 + cert_len(cert),
        Payload::Est { cert, .. } | Payload::BvEcho { cert, .. } => 1 + opt_cert_len(cert),
        Payload::BvReady { cert, bv_cert, .. } => 1 + opt_cert_len(cert) + cert_len(bv_cert),
        Payload::Coord { .. } | Payload::EchoBc { .. } => 1,
        Payload::Decide { cert, .. } => 1 + cert_len(cert),
        Payload::Pofs { pofs } => {
            4 + pofs
                .iter()
                .map(|p| 4 + embedded_len(&p.msg_a) + embedded_len(&p.msg_b))
                .sum::<usize>()
        }
        Payload::Relay { msgs } => 4 + msgs.iter().map(embedded_len).sum::<usize>(),
    }
}

pub fn encode(m: &SignedMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.wire_len() as usize);
    write_msg(m, &mut out);
    out
}

fn write_msg(m: &SignedMessage, out: &mut Vec<u8>) {
    out.extend(m.signer().0.to_be_bytes());
    out.push(m.tag() as u8);
    out.push(m.instance().kind_byte());
    out.extend(m.instance().index().to_be_bytes());
    out.extend(m.round().to_be_bytes());
    write_payload(m.payload(), out);
    out.extend((m.signature().len() as u16).to_be_bytes());
    out.extend(m.signature());
}

fn write_embedded(m: &Msg, out: &mut Vec<u8>) {
    out.extend(m.wire_len().to_be_bytes());
    write_msg(m, out);
}

fn write_cert(c: &Certificate, out: &mut Vec<u8>) {
    out.push(c.claim.kind as u8);
    out.push(c.claim.instance.kind_byte());
    out.extend(c.claim.instance.index().to_be_bytes());
    out.extend(c.claim.round.to_be_bytes());
    out.extend(c.claim.value.to_be_bytes());
    out.extend((c.votes.len() as u32).to_be_bytes());
    for v in &c.votes {
        write_embedded(v, out);
    }
}

fn write_opt_cert(c: &Option<Certificate>, out: &mut Vec<u8>) {
    match c {
        None => out.push(0),
        Some(c) => {
            out.push(1);
            write_cert(c, out);
        }
    }
}

fn write_payload(p: &Payload, out: &mut Vec<u8>) {
    match p {
        Payload::Init { value } | Payload::EchoRb { value } => out.extend(value.to_be_bytes()),
        Payload::ReadyRb { value, cert } => {
            out.extend(value.to_be_bytes());
            write_cert(cert, out);
        }
        Payload::Est { value, cert } | Payload::BvEcho { value, cert } => {
            out.push(value.as_u8());
            write_opt_cert(cert, out);
        }
        Payload::BvReady {
            value,
            cert,
            bv_cert,
        } => {
            out.push(value.as_u8());
            write_opt_cert(cert, out);
            write_cert(bv_cert, out);
        }
        Payload::Coord { value } => out.push(value.as_u8()),
        Payload::EchoBc { aux } => out.push(aux.bits()),
        Payload::Decide { value, cert } => {
            out.push(value.as_u8());
            write_cert(cert, out);
        }
        Payload::Pofs { pofs } => {
            out.extend((pofs.len() as u32).to_be_bytes());
            for p in pofs {
                out.extend(p.culprit.0.to_be_bytes());
                write_embedded(&p.msg_a, out);
                write_embedded(&p.msg_b, out);
            }
        }
        Payload::Relay { msgs } => {
            out.extend((msgs.len() as u32).to_be_bytes());
            for m in msgs {
                write_embedded(m, out);
            }
        }
    }
}

/// Decodes one message occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Msg, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let m = r.msg(0)?;
    if r.pos != bytes.len() {
        return Err(CodecError::Trailing(bytes.len() - r.pos));
    }
    Ok(m)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or(CodecError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bit(&mut self) -> Result<Bit, CodecError> {
        let b = self.u8()?;
        Bit::try_from(b).map_err(|_| CodecError::BadBit(b))
    }

    fn instance(&mut self) -> Result<InstanceId, CodecError> {
        let kind = self.u8()?;
        let index = self.u32()?;
        InstanceId::from_parts(kind, index).ok_or(CodecError::BadInstance(kind, index))
    }

    fn count(&mut self) -> Result<usize, CodecError> {
        let n = self.u32()? as usize;
        // Every counted element takes at least four bytes.
        if n > (self.buf.len() - self.pos) / 4 {
            return Err(CodecError::Truncated(self.buf.len()));
        }
        Ok(n)
    }

    fn msg(&mut self, depth: usize) -> Result<Msg, CodecError> {
        if depth > MAX_DEPTH {
            return Err(CodecError::TooDeep);
        }
        let signer = ProcessId(self.u32()?);
        let tag_byte = self.u8()?;
        let tag = Tag::from_u8(tag_byte).ok_or(CodecError::BadTag(tag_byte))?;
        let instance = self.instance()?;
        let round = self.u32()?;
        let payload = self.payload(tag, depth)?;
        let sig_len = self.u16()? as usize;
        let signature = self.take(sig_len)?.to_vec();
        Ok(Arc::new(SignedMessage::from_parts(
            signer, instance, round, payload, signature,
        )))
    }

    fn embedded(&mut self, depth: usize) -> Result<Msg, CodecError> {
        let len = self.u32()? as usize;
        let start = self.pos;
        let m = self.msg(depth + 1)?;
        if self.pos - start != len {
            return Err(CodecError::Truncated(start + len));
        }
        Ok(m)
    }

    fn cert(&mut self, depth: usize) -> Result<Certificate, CodecError> {
        let kind_byte = self.u8()?;
        let kind = ClaimKind::from_u8(kind_byte).ok_or(CodecError::BadClaim(kind_byte))?;
        let instance = self.instance()?;
        let round = self.u32()?;
        let value = self.u64()?;
        let n = self.count()?;
        let votes = (0..n)
            .map(|_| self.embedded(depth))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Certificate {
            claim: Claim {
                kind,
                instance,
                round,
                value,
            },
            votes,
        })
    }

    fn opt_cert(&mut self, depth: usize) -> Result<Option<Certificate>, CodecError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.cert(depth)?)),
            f => Err(CodecError::BadFlag(f)),
        }
    }

    fn payload(&mut self, tag: Tag, depth: usize) -> Result<Payload, CodecError> {
        Ok(match tag {
            Tag::Init => Payload::Init { value: self.u64()? },
            Tag::EchoRb => Payload::EchoRb { value: self.u64()? },
            Tag::ReadyRb => Payload::ReadyRb {
                value: self.u64()?,
                cert: self.cert(depth)?,
            },
            Tag::Est => Payload::Est {
                value: self.bit()?,
                cert: self.opt_cert(depth)?,
            },
            Tag::BvEcho => Payload::BvEcho {
                value: self.bit()?,
                cert: self.opt_cert(depth)?,
            },
            Tag::BvReady => Payload::BvReady {
                value: self.bit()?,
                cert: self.opt_cert(depth)?,
                bv_cert: self.cert(depth)?,
            },
            Tag::Coord => Payload::Coord { value: self.bit()? },
            Tag::EchoBc => {
                let b = self.u8()?;
                Payload::EchoBc {
                    aux: BinSet::from_bits(b).ok_or(CodecError::BadAux(b))?,
                }
            }
            Tag::Decide => Payload::Decide {
                value: self.bit()?,
                cert: self.cert(depth)?,
            },
            Tag::Pofs => {
                let n = self.count()?;
                let mut pofs = Vec::with_capacity(n);
                for _ in 0..n {
                    let culprit = ProcessId(self.u32()?);
                    let msg_a = self.embedded(depth)?;
                    let msg_b = self.embedded(depth)?;
                    pofs.push(ProofOfFraud {
                        culprit,
                        msg_a,
                        msg_b,
                    });
                }
                Payload::Pofs { pofs }
            }
            Tag::Relay => {
                let n = self.count()?;
                Payload::Relay {
                    msgs: (0..n)
                        .map(|_| self.embedded(depth))
                        .collect::<Result<_, _>>()?,
                }
            }
        })
    }
}
