//! Minimal WebSocket framing (text, binary, ping/pong, close) for the
//! `/live` channel, plus a client handshake for tools and tests.

use std::io;

use base64::Engine;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::sha1::sha1;

const GUID: &str = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
/// Largest accepted incoming message.
pub const MAX_MESSAGE: usize = 1 << 20;

pub const OP_CONTINUATION: u8 = 0x0;
pub const OP_TEXT: u8 = 0x1;
pub const OP_BINARY: u8 = 0x2;
pub const OP_CLOSE: u8 = 0x8;
pub const OP_PING: u8 = 0x9;
pub const OP_PONG: u8 = 0xA;

/// `Sec-WebSocket-Accept` for a client key.
pub fn accept_key(key: &str) -> String {
    base64::engine::general_purpose::STANDARD.encode(sha1(format!("{key}{GUID}").as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Text(String),
    Binary(Vec<u8>),
    Ping(Vec<u8>),
    Pong(Vec<u8>),
    Close,
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

/// Reads whole messages off a stream, joining fragments. Control frames
/// may arrive between fragments; they are returned as they come and the
/// partial message is kept for the next call.
pub struct Reader<R> {
    inner: R,
    partial: Option<(u8, Vec<u8>)>,
}

impl<R: AsyncRead + Unpin> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner, partial: None }
    }

    pub async fn next(&mut self) -> io::Result<Message> {
        let r = &mut self.inner;
        loop {
            let mut head = [0u8; 2];
            r.read_exact(&mut head).await?;
            let fin = head[0] & 0x80 != 0;
            let opcode = head[0] & 0x0F;
            let masked = head[1] & 0x80 != 0;
            let len = match head[1] & 0x7F {
                126 => r.read_u16().await? as u64,
                127 => r.read_u64().await?,
                n => n as u64,
            };
            if len > MAX_MESSAGE as u64 {
                return Err(invalid("message too large"));
            }
            let mut mask = [0u8; 4];
            if masked {
                r.read_exact(&mut mask).await?;
            }
            let mut payload = vec![0u8; len as usize];
            r.read_exact(&mut payload).await?;
            if masked {
                payload.iter_mut().enumerate().for_each(|(i, b)| *b ^= mask[i % 4]);
            }
            match opcode {
                OP_CLOSE => return Ok(Message::Close),
                OP_PING => return Ok(Message::Ping(payload)),
                OP_PONG => return Ok(Message::Pong(payload)),
                OP_TEXT | OP_BINARY if self.partial.is_none() => self.partial = Some((opcode, payload)),
                OP_CONTINUATION if self.partial.is_some() => {
                    let (_, buf) = self.partial.as_mut().expect("checked");
                    buf.extend_from_slice(&payload);
                    if buf.len() > MAX_MESSAGE {
                        return Err(invalid("message too large"));
                    }
                }
                _ => return Err(invalid("unexpected opcode")),
            }
            if fin {
                let (op, buf) = self.partial.take().expect("data frame seen");
                return Ok(if op == OP_TEXT {
                    Message::Text(String::from_utf8(buf).map_err(|_| invalid("text is not UTF-8"))?)
                } else {
                    Message::Binary(buf)
                });
            }
        }
    }
}

/// Writes one unfragmented frame; clients must pass a mask.
pub async fn write_frame<W: AsyncWrite + Unpin>(
    w: &mut W,
    opcode: u8,
    payload: &[u8],
    mask: Option<[u8; 4]>,
) -> io::Result<()> {
    let mut frame = Vec::with_capacity(payload.len() + 14);
    frame.push(0x80 | opcode);
    let m = if mask.is_some() { 0x80 } else { 0 };
    match payload.len() {
        n if n < 126 => frame.push(m | n as u8),
        n if n <= u16::MAX as usize => {
            frame.push(m | 126);
            frame.extend_from_slice(&(n as u16).to_be_bytes());
        }
        n => {
            frame.push(m | 127);
            frame.extend_from_slice(&(n as u64).to_be_bytes());
        }
    }
    match mask {
        Some(k) => {
            frame.extend_from_slice(&k);
            frame.extend(payload.iter().enumerate().map(|(i, b)| b ^ k[i % 4]));
        }
        None => frame.extend_from_slice(payload),
    }
    w.write_all(&frame).await?;
    w.flush().await
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, msg: &Message, mask: Option<[u8; 4]>) -> io::Result<()> {
    match msg {
        Message::Text(s) => write_frame(w, OP_TEXT, s.as_bytes(), mask).await,
        Message::Binary(b) => write_frame(w, OP_BINARY, b, mask).await,
        Message::Ping(b) => write_frame(w, OP_PING, b, mask).await,
        Message::Pong(b) => write_frame(w, OP_PONG, b, mask).await,
        Message::Close => write_frame(w, OP_CLOSE, &[], mask).await,
    }
}

/// Performs the client side of the opening handshake on `stream`.
pub async fn client_handshake<S: AsyncRead + AsyncWrite + Unpin>(stream: &mut S, host: &str, path: &str) -> io::Result<()> {
    let key = base64::engine::general_purpose::STANDARD.encode(rand::random::<[u8; 16]>());
    let request = format!(
        "GET {path} HTTP/1.1\r\nHost: {host}\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n\
         Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
    );
    stream.write_all(request.as_bytes()).await?;
    let mut head = Vec::new();
    while !head.ends_with(b"\r\n\r\n") {
        head.push(stream.read_u8().await?);
        if head.len() > 8192 {
            return Err(invalid("handshake response too long"));
        }
    }
    let text = String::from_utf8_lossy(&head);
    if !text.starts_with("HTTP/1.1 101") {
        return Err(invalid(text.lines().next().unwrap_or("empty response")));
    }
    let expected = accept_key(&key);
    let ok = text.lines().any(|l| {
        l.split_once(':')
            .is_some_and(|(k, v)| k.eq_ignore_ascii_case("sec-websocket-accept") && v.trim() == expected)
    });
    if !ok {
        return Err(invalid("bad Sec-WebSocket-Accept"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accept_key_matches_the_protocol_example() {
        assert_eq!(accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
    }

    #[tokio::test]
    async fn frames_round_trip_masked_and_fragmented() {
        let (mut a, b) = tokio::io::duplex(1 << 20);
        let mut b = Reader::new(b);
        let long = "x".repeat(70_000);
        for msg in [Message::Text("hi".into()), Message::Binary(vec![1; 300]), Message::Text(long), Message::Ping(vec![7])] {
            write_message(&mut a, &msg, Some([1, 2, 3, 4])).await.unwrap();
            assert_eq!(b.next().await.unwrap(), msg);
        }
        // two fragments with a ping in between
        a.write_all(&[OP_TEXT, 2, b'a', b'b']).await.unwrap();
        a.write_all(&[0x80 | OP_PING, 0]).await.unwrap();
        a.write_all(&[0x80 | OP_CONTINUATION, 1, b'c']).await.unwrap();
        assert_eq!(b.next().await.unwrap(), Message::Ping(vec![]));
        assert_eq!(b.next().await.unwrap(), Message::Text("abc".into()));
        write_message(&mut a, &Message::Close, None).await.unwrap();
        assert_eq!(b.next().await.unwrap(), Message::Close);
    }

    #[tokio::test]
    async fn oversized_and_stray_frames_are_rejected() {
        let (mut a, b) = tokio::io::duplex(1 << 10);
        let mut b = Reader::new(b);
        a.write_all(&[0x80 | OP_TEXT, 127]).await.unwrap();
        a.write_all(&(u64::MAX).to_be_bytes()).await.unwrap();
        assert!(b.next().await.is_err());
        let (mut a, b) = tokio::io::duplex(1 << 10);
        let mut b = Reader::new(b);
        a.write_all(&[0x80 | OP_CONTINUATION, 0]).await.unwrap();
        assert!(b.next().await.is_err());
    }
}
