//! Chat-completion client for a live knowledge provider.
//!
//! Replies must be JSON objects of a fixed shape; a reply that fails
//! validation is re-asked up to `retries` times before giving up. The wire
//! transport is a trait so tests and replays never touch the network.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use super::{
    clamp_score, ConstructSample, FeasibilityOpinion, KnowledgeError, KnowledgeQuery, KnowledgeSource,
    QueryContext, QueryKind, SampleOrigin,
};
use crate::catalog::CatalogChunk;
use crate::construct::{CommandBinding, Construct, Feasibility};
use crate::translator::shapes::{primitive_for_shape, property_binding};

pub trait Transport: Send + Sync {
    /// Sends one chat-completion request body and returns the response body.
    fn complete(&self, request: &Json) -> Result<Json, KnowledgeError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub url: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub requests_per_second: f64,
    pub retries: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            url: None,
            api_key: None,
            model: "default".into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            requests_per_second: 2.0,
            retries: 3,
        }
    }
}

impl LiveConfig {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let mut c = LiveConfig { url: var("KNOWLEDGE_API_URL"), api_key: var("KNOWLEDGE_API_KEY"), ..Default::default() };
        if let Some(m) = var("KNOWLEDGE_MODEL") {
            c.model = m;
        }
        c
    }
}

/// Caps the number of requests in flight.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimit);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("limit poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        InFlightLimit { cap: cap.max(1), count: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().expect("limit poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("limit poisoned");
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.count.lock().expect("limit poisoned")
    }
}

/// Token bucket refilled at `rate` tokens per second up to `burst`.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64, burst: f64) -> Self {
        TokenBucket { rate, burst: burst.max(1.0), state: Mutex::new((burst.max(1.0), Instant::now())) }
    }

    /// Takes a token, or reports how long to wait for one.
    pub fn try_take(&self, now: Instant) -> Result<(), Duration> {
        let mut s = self.state.lock().expect("bucket poisoned");
        let elapsed = now.saturating_duration_since(s.1).as_secs_f64();
        s.0 = (s.0 + elapsed * self.rate).min(self.burst);
        s.1 = now;
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            Ok(())
        } else if self.rate > 0.0 {
            Err(Duration::from_secs_f64((1.0 - s.0) / self.rate))
        } else {
            Err(Duration::from_secs(1))
        }
    }

    pub fn take(&self) {
        while let Err(wait) = self.try_take(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    limit: InFlightLimit,
    bucket: TokenBucket,
}

impl HttpTransport {
    pub fn new(c: &LiveConfig) -> Result<Self, KnowledgeError> {
        let url = c
            .url
            .clone()
            .ok_or_else(|| KnowledgeError::ProviderUnavailable("KNOWLEDGE_API_URL is not set".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(c.timeout)).build().into();
        Ok(HttpTransport {
            agent,
            url,
            api_key: c.api_key.clone(),
            limit: InFlightLimit::new(c.max_in_flight),
            bucket: TokenBucket::new(c.requests_per_second, c.max_in_flight as f64),
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &Json) -> Result<Json, KnowledgeError> {
        let _permit = self.limit.acquire();
        self.bucket.take();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let unavailable = |e: ureq::Error| KnowledgeError::ProviderUnavailable(e.to_string());
        let mut resp = req.send_json(request).map_err(unavailable)?;
        resp.body_mut().read_json().map_err(unavailable)
    }
}

const SYSTEM_PROMPT: &str = "You advise on product prototyping in a constructive solid geometry \
tool. Parts are built from primitive subparts named shape_index (for example cylinder_0). Part \
constructs carry part, subpart, property, operation and either value (for set) or delta (for \
increase and decrease). Relation constructs carry relation (\"A <-> B\"), descriptor, operation and \
either value \"on\" (for assign) or a two-element delta (for closer and farther). Every reply is a \
single JSON object and nothing else.";

const REASK: &str = "That reply could not be used: {err}. Answer again with one JSON object of the \
requested shape and no other text.";

/// Knowledge source backed by a chat-completion provider.
pub struct LiveClient<T> {
    config: LiveConfig,
    transport: T,
}

struct Reply {
    content: Json,
    logprobs: Option<Vec<f64>>,
}

fn parse_reply(raw: &Json) -> Result<Reply, String> {
    let choice = raw.pointer("/choices/0").ok_or("response has no choices")?;
    let text = choice
        .pointer("/message/content")
        .and_then(Json::as_str)
        .ok_or("response has no message content")?;
    let content: Json = serde_json::from_str(text.trim()).map_err(|e| format!("not JSON: {e}"))?;
    if !content.is_object() {
        return Err("reply is not a JSON object".into());
    }
    let logprobs = choice.pointer("/logprobs/content").and_then(Json::as_array).map(|toks| {
        toks.iter().filter_map(|t| t.get("logprob").and_then(Json::as_f64)).collect::<Vec<_>>()
    });
    Ok(Reply { content, logprobs: logprobs.filter(|l| !l.is_empty()) })
}

fn parse_construct(v: &Json) -> Result<Construct, String> {
    let c: Construct = serde_json::from_value(v.clone()).map_err(|e| format!("bad construct: {e}"))?;
    c.check().map_err(|e| e.to_string())?;
    Ok(c)
}

fn rating_score(v: &Json) -> Result<f64, String> {
    let r = v.get("rating").and_then(Json::as_f64).ok_or("missing numeric `rating`")?;
    if !(0.0..=10.0).contains(&r) {
        return Err(format!("rating {r} is outside 0..10"));
    }
    Ok(clamp_score((r + 0.1) / 10.1))
}

impl<T: Transport> LiveClient<T> {
    pub fn new(config: LiveConfig, transport: T) -> Self {
        LiveClient { config, transport }
    }

    fn body(&self, query: &KnowledgeQuery, instruction: &str) -> Json {
        let q = serde_json::to_string(query).expect("query serializes");
        json!({
            "model": self.config.model,
            "temperature": 0,
            "logprobs": true,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": format!("{instruction}\nQuery: {q}")},
            ],
        })
    }

    /// Sends `body`, re-asking until `accept` takes the reply or retries run out.
    fn ask<R>(&self, mut body: Json, accept: impl Fn(&Reply) -> Result<R, String>) -> Result<R, KnowledgeError> {
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            let raw = self.transport.complete(&body)?;
            match parse_reply(&raw).and_then(|r| accept(&r)) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("provider reply rejected: {e}");
                    let said = raw.pointer("/choices/0/message/content").cloned().unwrap_or(Json::Null);
                    let msgs = body["messages"].as_array_mut().expect("messages array");
                    msgs.push(json!({"role": "assistant", "content": said}));
                    msgs.push(json!({"role": "user", "content": REASK.replace("{err}", &e)}));
                    last = e;
                }
            }
        }
        Err(KnowledgeError::MalformedProviderOutput(last))
    }

    fn query(&self, kind: QueryKind, domain: &str, context: Json, ctx: &QueryContext) -> KnowledgeQuery {
        KnowledgeQuery {
            kind,
            domain: domain.into(),
            context,
            breadth_hint: ctx.breadth_hint,
            depth_hint: ctx.depth_hint,
        }
    }
}

impl<T: Transport> KnowledgeSource for LiveClient<T> {
    fn sample_seeds(
        &self,
        domain: &str,
        m: usize,
        ctx: &QueryContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ConstructSample>, KnowledgeError> {
        if m == 0 {
            return Err(KnowledgeError::InvalidCount);
        }
        let q = self.query(QueryKind::SeedSample, domain, json!({"interface": ctx, "nonce": rng.gen::<u32>()}), ctx);
        let instruction = format!(
            "Propose {m} constructs a designer might use when prototyping a {domain}. Avoid the \
             blacklisted keys, prefer keys not yet known, and refine the focus constructs into \
             finer subparts when present. Higher breadth_hint means more varied parts; higher \
             depth_hint means more adjustments. Reply as {{\"constructs\": [{{\"construct\": \
             {{...}}, \"rating\": 0-10}}]}} with exactly {m} items."
        );
        self.ask(self.body(&q, &instruction), |r| {
            let items = r.content.get("constructs").and_then(Json::as_array).ok_or("missing `constructs` array")?;
            if items.len() < m {
                return Err(format!("asked for {m} constructs, got {}", items.len()));
            }
            items
                .iter()
                .take(m)
                .enumerate()
                .map(|(i, it)| {
                    let construct = parse_construct(it.get("construct").ok_or("item without `construct`")?)?;
                    Ok(ConstructSample {
                        construct,
                        score: rating_score(it)?,
                        origin: SampleOrigin { chain: i, step: 0 },
                    })
                })
                .collect()
        })
    }

    fn propose(
        &self,
        domain: &str,
        current: &ConstructSample,
        ctx: &QueryContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<ConstructSample, KnowledgeError> {
        let q = self.query(
            QueryKind::Perturb,
            domain,
            json!({"current": current.construct, "blacklist": ctx.blacklist, "nonce": rng.gen::<u32>()}),
            ctx,
        );
        let instruction = "Change one or two fields of the current construct so that it still \
            makes sense for the product, keeping it off the blacklist. Reply as \
            {\"construct\": {...}}.";
        let construct = self.ask(self.body(&q, instruction), |r| {
            let c = parse_construct(r.content.get("construct").ok_or("missing `construct`")?)?;
            if c == current.construct {
                return Err("the construct is unchanged".into());
            }
            if ctx.is_blacklisted(&c.key()) {
                return Err(format!("`{}` is blacklisted", c.key()));
            }
            Ok(c)
        })?;
        let score = self.score(domain, &construct)?;
        Ok(ConstructSample { construct, score, origin: current.origin })
    }

    fn score(&self, domain: &str, c: &Construct) -> Result<f64, KnowledgeError> {
        let q = self.query(QueryKind::Score, domain, json!({"construct": c}), &QueryContext::default());
        let instruction = "Restate the construct as a short phrase a designer would say, then rate \
            from 0 to 10 how natural it is for this product. Reply as {\"rendering\": \"...\", \
            \"rating\": r}.";
        self.ask(self.body(&q, instruction), |r| match &r.logprobs {
            Some(lp) => {
                r.content.get("rendering").and_then(Json::as_str).ok_or("missing `rendering`")?;
                Ok(clamp_score((lp.iter().sum::<f64>() / lp.len() as f64).exp()))
            }
            None => rating_score(&r.content),
        })
    }

    fn judge(&self, domain: &str, c: &Construct, docs: &[CatalogChunk]) -> Result<FeasibilityOpinion, KnowledgeError> {
        if docs.is_empty() {
            return Err(KnowledgeError::NoDocuments);
        }
        let docs_json: Vec<Json> = docs.iter().map(|d| json!({"command": d.entry_id, "text": d.text})).collect();
        let q = self.query(QueryKind::Judge, domain, json!({"construct": c, "docs": docs_json}), &QueryContext::default());
        let instruction = "Using only the documentation excerpts, decide whether the construct is \
            realized by one command parameter (POINT_TO_POINT), needs a finer breakdown into \
            simpler shapes (DECOMPOSE), or cannot be expressed geometrically at all (PRUNE). Reply \
            as {\"verdict\": ..., \"rationale\": ..., \"confidence\": 0-1, \"command\": optional, \
            \"param\": optional, \"alternative\": optional}.";
        self.ask(self.body(&q, instruction), |r| {
            let v = &r.content;
            let verdict: Feasibility = serde_json::from_value(v.get("verdict").cloned().unwrap_or(Json::Null))
                .map_err(|_| "verdict must be POINT_TO_POINT, DECOMPOSE or PRUNE")?;
            let confidence = v.get("confidence").and_then(Json::as_f64).ok_or("missing numeric `confidence`")?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(format!("confidence {confidence} is outside 0..1"));
            }
            let text = |k: &str| v.get(k).and_then(Json::as_str).map(str::to_string);
            let mut binding = match (text("command"), text("param")) {
                (Some(command), Some(param)) => Some(CommandBinding { command, param, scale: 1.0 }),
                _ => None,
            };
            if let (Feasibility::PointToPoint, Construct::Part(p), None) = (verdict, c, &binding) {
                binding = p
                    .subpart_id()
                    .ok()
                    .and_then(|s| primitive_for_shape(&s.shape))
                    .and_then(|prim| property_binding(prim, &p.property));
                if binding.is_none() {
                    return Err("a point-to-point verdict on a part needs `command` and `param`".into());
                }
            }
            Ok(FeasibilityOpinion {
                verdict,
                rationale: text("rationale").unwrap_or_default(),
                confidence,
                binding,
                alternative: text("alternative"),
            })
        })
    }
}
