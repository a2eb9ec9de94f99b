//! Minimal chat-completion server for offline runs and tests.
//!
//! Speaks just enough HTTP/1.1 for one request per connection. Every
//! request is recorded so tests can inspect exactly what was sent.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::{nn_pattern_from_text, TokenUsage};
use crate::prompt::estimate_tokens;

#[derive(Clone, Debug, PartialEq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Option<Value> {
        serde_json::from_str(&self.body).ok()
    }

    /// Content of the last message in the request.
    pub fn last_message(&self) -> Option<String> {
        let v = self.json()?;
        v["messages"].as_array()?.last()?["content"].as_str().map(str::to_string)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StubReply {
    Completion { content: String, usage: Option<TokenUsage> },
    Status { code: u16, body: String },
    /// Raw bytes sent as a 200 body.
    Garbage(String),
    Delay(Duration, Box<StubReply>),
}

impl StubReply {
    pub fn text(content: impl Into<String>) -> Self {
        StubReply::Completion { content: content.into(), usage: None }
    }
}

pub type Responder = dyn Fn(usize, &RecordedRequest) -> StubReply + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds to an ephemeral localhost port. `responder` gets the zero-based
    /// request index and the parsed request.
    pub fn start(responder: Box<Responder>) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", responder)
    }

    pub fn bind(addr: &str, responder: Box<Responder>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let responder: Arc<Responder> = Arc::from(responder);
        let counter = Arc::new(AtomicUsize::new(0));
        let (reqs, stop_flag) = (requests.clone(), stop.clone());
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (reqs, responder, counter) = (reqs.clone(), responder.clone(), counter.clone());
                std::thread::spawn(move || {
                    if let Err(e) = serve(stream, &reqs, &*responder, &counter) {
                        log::debug!("stub connection error: {e}");
                    }
                });
            }
        });
        Ok(Self { addr, requests, stop, accept: Some(accept) })
    }

    /// Replies from the list in order, repeating the last one.
    pub fn scripted(replies: Vec<StubReply>) -> std::io::Result<Self> {
        assert!(!replies.is_empty(), "scripted stub needs at least one reply");
        Self::start(Box::new(move |i, _| replies[i.min(replies.len() - 1)].clone()))
    }

    /// Answers with the nearest-neighbour continuation of the history found
    /// in the prompt, and reports estimated token usage.
    pub fn pattern() -> std::io::Result<Self> {
        Self::start(Box::new(pattern_reply))
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Responder used by [`StubServer::pattern`].
pub fn pattern_reply(_index: usize, req: &RecordedRequest) -> StubReply {
    let Some(body) = req.json() else {
        return StubReply::Status { code: 400, body: r#"{"error":"bad json"}"#.into() };
    };
    let prompt: String = body["messages"]
        .as_array()
        .map(|m| m.iter().filter_map(|x| x["content"].as_str()).collect::<Vec<_>>().join("\n"))
        .unwrap_or_default();
    let user = req.last_message().unwrap_or_default();
    let content = nn_pattern_from_text(&user).unwrap_or_else(|| "no history to continue".into());
    let usage = TokenUsage { input: estimate_tokens(&prompt) as u64, output: estimate_tokens(&content) as u64 };
    StubReply::Completion { content, usage: Some(usage) }
}

fn reason(code: u16) -> &'static str {
    match code {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn serve(
    stream: TcpStream,
    requests: &Mutex<Vec<RecordedRequest>>,
    responder: &Responder,
    counter: &AtomicUsize,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    if method.is_empty() {
        return Ok(());
    }
    let mut headers = Vec::new();
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let req = RecordedRequest { method, path, headers, body: String::from_utf8_lossy(&body).into_owned() };
    requests.lock().unwrap_or_else(|e| e.into_inner()).push(req.clone());
    let index = counter.fetch_add(1, Ordering::SeqCst);

    let mut reply = responder(index, &req);
    while let StubReply::Delay(d, inner) = reply {
        std::thread::sleep(d);
        reply = *inner;
    }
    let (code, payload) = match reply {
        StubReply::Completion { content, usage } => {
            let mut v = json!({
                "id": format!("stub-{index}"),
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            });
            if let Some(u) = usage {
                v["usage"] = json!({
                    "prompt_tokens": u.input,
                    "completion_tokens": u.output,
                    "total_tokens": u.input + u.output,
                });
            }
            (200, v.to_string())
        }
        StubReply::Status { code, body } => (code, body),
        StubReply::Garbage(s) => (200, s),
        StubReply::Delay(..) => unreachable!(),
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {code} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        reason(code),
        payload.len()
    )?;
    out.flush()
}
