//! Length-prefixed wire unit shared by the broker, RPC channels and the relay.
//!
//! ```text
//! +----------------+------+----------------------+---------+
//! | length: u32 BE | kind | kind-specific header | payload |
//! +----------------+------+----------------------+---------+
//! ```
//!
//! `length` counts every byte after the length field and never exceeds
//! [`MAX_FRAME`].
//!
//! | kind    | header                                   |
//! |---------|------------------------------------------|
//! | EVT = 1 | topic length (u16 BE), UTF-8 topic       |
//! | REQ = 2 | correlation id (u64 BE)                  |
//! | RSP = 3 | correlation id (u64 BE)                  |
//! | REG = 4 | topic length (u16 BE), UTF-8 topic       |
//! | FWD = 5 | name length (u16 BE), name, stream (u64) |
//!
//! REG frames carry no payload.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAX_FRAME: usize = 1 << 20;

pub const EVT: u8 = 1;
pub const REQ: u8 = 2;
pub const RSP: u8 = 3;
pub const REG: u8 = 4;
pub const FWD: u8 = 5;

/// FWD name marking the end of a logical stream.
pub const FWD_CLOSE: &str = "!close";
/// FWD name carrying an error message that also ends the stream.
pub const FWD_ERROR: &str = "!error";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Event {
        topic: String,
        payload: Vec<u8>,
    },
    Request {
        id: u64,
        payload: Vec<u8>,
    },
    Response {
        id: u64,
        payload: Vec<u8>,
    },
    Register {
        topic: String,
    },
    /// Opens a stream when `name` is a service name, carries stream data
    /// when `name` is empty, and closes it when `name` is [`FWD_CLOSE`] or
    /// [`FWD_ERROR`].
    Forward {
        name: String,
        stream: u64,
        payload: Vec<u8>,
    },
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME} byte limit")]
    Oversize(usize),
    #[error("frame truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("empty frame")]
    Empty,
    #[error("name or topic is not valid UTF-8")]
    BadUtf8,
    #[error("name or topic longer than 65535 bytes")]
    NameTooLong,
    #[error("REG frame carries {0} unexpected payload bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn kind(&self) -> u8 {
        match self {
            Frame::Event { .. } => EVT,
            Frame::Request { .. } => REQ,
            Frame::Response { .. } => RSP,
            Frame::Register { .. } => REG,
            Frame::Forward { .. } => FWD,
        }
    }

    pub fn data(stream: u64, payload: Vec<u8>) -> Frame {
        Frame::Forward {
            name: String::new(),
            stream,
            payload,
        }
    }

    pub fn close(stream: u64) -> Frame {
        Frame::Forward {
            name: FWD_CLOSE.to_string(),
            stream,
            payload: Vec::new(),
        }
    }

    pub fn fwd_error(stream: u64, message: &str) -> Frame {
        Frame::Forward {
            name: FWD_ERROR.to_string(),
            stream,
            payload: message.as_bytes().to_vec(),
        }
    }

    /// Largest payload that fits a frame with this header.
    pub fn max_payload(header_len: usize) -> usize {
        MAX_FRAME - 1 - header_len
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let mut body = vec![self.kind()];
        let put_name = |body: &mut Vec<u8>, name: &str| -> Result<(), FrameError> {
            let len = u16::try_from(name.len()).map_err(|_| FrameError::NameTooLong)?;
            body.extend_from_slice(&len.to_be_bytes());
            body.extend_from_slice(name.as_bytes());
            Ok(())
        };
        match self {
            Frame::Event { topic, payload } => {
                put_name(&mut body, topic)?;
                body.extend_from_slice(payload);
            }
            Frame::Request { id, payload } | Frame::Response { id, payload } => {
                body.extend_from_slice(&id.to_be_bytes());
                body.extend_from_slice(payload);
            }
            Frame::Register { topic } => put_name(&mut body, topic)?,
            Frame::Forward {
                name,
                stream,
                payload,
            } => {
                put_name(&mut body, name)?;
                body.extend_from_slice(&stream.to_be_bytes());
                body.extend_from_slice(payload);
            }
        }
        if body.len() > MAX_FRAME {
            return Err(FrameError::Oversize(body.len()));
        }
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Decodes the frame at the front of `buf`, returning it with the number
    /// of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), FrameError> {
        if buf.len() < 4 {
            return Err(FrameError::Truncated {
                needed: 4 - buf.len(),
            });
        }
        let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(FrameError::Oversize(len));
        }
        if buf.len() < 4 + len {
            return Err(FrameError::Truncated {
                needed: 4 + len - buf.len(),
            });
        }
        Ok((Self::decode_body(&buf[4..4 + len])?, 4 + len))
    }

    fn decode_body(body: &[u8]) -> Result<Frame, FrameError> {
        let (&kind, rest) = body.split_first().ok_or(FrameError::Empty)?;
        let take = |rest: &[u8], n: usize| -> Result<(Vec<u8>, usize), FrameError> {
            if rest.len() < n {
                Err(FrameError::Truncated {
                    needed: n - rest.len(),
                })
            } else {
                Ok((rest[..n].to_vec(), n))
            }
        };
        let name = |rest: &[u8]| -> Result<(String, usize), FrameError> {
            let (len, _) = take(rest, 2)?;
            let n = u16::from_be_bytes([len[0], len[1]]) as usize;
            let (bytes, _) = take(&rest[2..], n)?;
            let s = String::from_utf8(bytes).map_err(|_| FrameError::BadUtf8)?;
            Ok((s, 2 + n))
        };
        let id = |rest: &[u8]| -> Result<u64, FrameError> {
            let (b, _) = take(rest, 8)?;
            Ok(u64::from_be_bytes(b.try_into().unwrap()))
        };
        Ok(match kind {
            EVT => {
                let (topic, used) = name(rest)?;
                Frame::Event {
                    topic,
                    payload: rest[used..].to_vec(),
                }
            }
            REQ => Frame::Request {
                id: id(rest)?,
                payload: rest[8..].to_vec(),
            },
            RSP => Frame::Response {
                id: id(rest)?,
                payload: rest[8..].to_vec(),
            },
            REG => {
                let (topic, used) = name(rest)?;
                if used != rest.len() {
                    return Err(FrameError::TrailingBytes(rest.len() - used));
                }
                Frame::Register { topic }
            }
            FWD => {
                let (name, used) = name(rest)?;
                let stream = id(&rest[used..])?;
                Frame::Forward {
                    name,
                    stream,
                    payload: rest[used + 8..].to_vec(),
                }
            }
            other => return Err(FrameError::UnknownKind(other)),
        })
    }
}

/// Reads one frame; `Ok(None)` on a clean end of stream before any byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated { needed: 4 - got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(FrameError::Oversize(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Truncated { needed: n }
        } else {
            e.into()
        }
    })?;
    Frame::decode_body(&body).map(Some)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), FrameError> {
    w.write_all(&frame.encode()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_event() {
        let f = Frame::Event {
            topic: "t".into(),
            payload: b"hi".to_vec(),
        };
        assert_eq!(f.encode().unwrap(), [0, 0, 0, 6, 1, 0, 1, b't', b'h', b'i']);
    }

    #[test]
    fn golden_request_and_response() {
        let req = Frame::Request {
            id: 1,
            payload: b"x".to_vec(),
        };
        assert_eq!(
            req.encode().unwrap(),
            [0, 0, 0, 10, 2, 0, 0, 0, 0, 0, 0, 0, 1, b'x']
        );
        let rsp = Frame::Response {
            id: 0x0102030405060708,
            payload: vec![],
        };
        assert_eq!(
            rsp.encode().unwrap(),
            [0, 0, 0, 9, 3, 1, 2, 3, 4, 5, 6, 7, 8]
        );
    }

    #[test]
    fn golden_register() {
        let f = Frame::Register { topic: "ab".into() };
        assert_eq!(f.encode().unwrap(), [0, 0, 0, 5, 4, 0, 2, b'a', b'b']);
    }

    #[test]
    fn golden_forward() {
        let f = Frame::Forward {
            name: "db".into(),
            stream: 7,
            payload: vec![0xff],
        };
        assert_eq!(
            f.encode().unwrap(),
            [0, 0, 0, 14, 5, 0, 2, b'd', b'b', 0, 0, 0, 0, 0, 0, 0, 7, 0xff]
        );
    }

    #[test]
    fn oversize_is_rejected_both_ways() {
        let f = Frame::Request {
            id: 0,
            payload: vec![0; MAX_FRAME],
        };
        assert!(matches!(f.encode(), Err(FrameError::Oversize(_))));
        let fits = Frame::Request {
            id: 0,
            payload: vec![0; Frame::max_payload(8)],
        };
        assert_eq!(fits.encode().unwrap().len(), 4 + MAX_FRAME);

        let mut header = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        header.push(REQ);
        assert!(matches!(
            Frame::decode(&header),
            Err(FrameError::Oversize(_))
        ));
    }

    #[test]
    fn malformed_frames() {
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 1, 9]),
            Err(FrameError::UnknownKind(9))
        ));
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 0]),
            Err(FrameError::Empty)
        ));
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 3, 2, 0, 0]),
            Err(FrameError::Truncated { .. })
        ));
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 5, 4, 0, 1, b'a', b'b']),
            Err(FrameError::TrailingBytes(1))
        ));
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 4, 1, 0, 1, 0xff]),
            Err(FrameError::BadUtf8)
        ));
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 9, 2]),
            Err(FrameError::Truncated { needed: 8 })
        ));
    }

    #[test]
    fn stream_reading() {
        let mut bytes = Frame::Register { topic: "t".into() }.encode().unwrap();
        bytes.extend(Frame::close(3).encode().unwrap());
        let mut cur = io::Cursor::new(bytes);
        assert_eq!(
            read_frame(&mut cur).unwrap(),
            Some(Frame::Register { topic: "t".into() })
        );
        assert_eq!(read_frame(&mut cur).unwrap(), Some(Frame::close(3)));
        assert_eq!(read_frame(&mut cur).unwrap(), None);

        let mut cut = io::Cursor::new(vec![0, 0, 0, 9, 2, 0]);
        assert!(matches!(
            read_frame(&mut cut),
            Err(FrameError::Truncated { .. })
        ));
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        let payload = proptest::collection::vec(any::<u8>(), 0..64);
        prop_oneof![
            ("[a-z]{0,8}", payload.clone())
                .prop_map(|(topic, payload)| Frame::Event { topic, payload }),
            (any::<u64>(), payload.clone())
                .prop_map(|(id, payload)| Frame::Request { id, payload }),
            (any::<u64>(), payload.clone())
                .prop_map(|(id, payload)| Frame::Response { id, payload }),
            "[a-z]{0,8}".prop_map(|topic| Frame::Register { topic }),
            ("[a-z!]{0,8}", any::<u64>(), payload).prop_map(|(name, stream, payload)| {
                Frame::Forward {
                    name,
                    stream,
                    payload,
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(frame in arb_frame()) {
            let bytes = frame.encode().unwrap();
            let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
            prop_assert_eq!(len, bytes.len() - 4);
            let (back, used) = Frame::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, frame);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..32)) {
            let _ = Frame::decode(&bytes);
        }
    }
}
