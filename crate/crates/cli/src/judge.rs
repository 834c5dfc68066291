//! Remote verdict source for solutions without a parseable boxed answer.
//!
//! Talks to a chat-completion endpoint with the fixed judging prompt and
//! expects a bare True/False verdict. Every transport or parse failure
//! surfaces as `JudgeUnavailable`, which verification downstream records
//! as incorrect-and-flagged rather than aborting a run.

use std::time::Duration;

use bftok_core::eval::{render_judge_prompt, Judge};
use bftok_core::{Error, Result};

use crate::config::JudgeSection;

pub struct RemoteJudge {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
    model: String,
}

impl RemoteJudge {
    pub fn new(url: String, key: Option<String>, model: String) -> RemoteJudge {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        RemoteJudge {
            agent: config.into(),
            url,
            key,
            model,
        }
    }

    /// Builds a judge from the environment (`BFTOK_JUDGE_URL`,
    /// `BFTOK_JUDGE_KEY`, `BFTOK_JUDGE_MODEL`) falling back to the config
    /// section; `None` when neither names an endpoint.
    pub fn from_env_or_config(cfg: &JudgeSection) -> Option<RemoteJudge> {
        let url = std::env::var("BFTOK_JUDGE_URL")
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| (!cfg.url.is_empty()).then(|| cfg.url.clone()))?;
        let key = std::env::var("BFTOK_JUDGE_KEY").ok().filter(|s| !s.is_empty());
        let model = std::env::var("BFTOK_JUDGE_MODEL")
            .ok()
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| {
                if cfg.model.is_empty() {
                    "judge".to_string()
                } else {
                    cfg.model.clone()
                }
            });
        Some(RemoteJudge::new(url, key, model))
    }

    fn ask(&self, prompt: &str) -> std::result::Result<String, Box<dyn std::error::Error>> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": 8,
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = req.send_json(&body)?;
        let value: serde_json::Value = response.body_mut().read_json()?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or("response carries no message content")?;
        Ok(content.to_string())
    }
}

/// Maps a verdict string to a boolean; `None` when it is neither.
fn parse_verdict(text: &str) -> Option<bool> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("true") || t.starts_with("True") {
        Some(true)
    } else if t.eq_ignore_ascii_case("false") || t.starts_with("False") {
        Some(false)
    } else {
        None
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, question: &str, correct_answer: &str, student_solution: &str) -> Result<bool> {
        let prompt = render_judge_prompt(question, correct_answer, student_solution);
        let text = self.ask(&prompt).map_err(|_| Error::JudgeUnavailable)?;
        parse_verdict(&text).ok_or(Error::JudgeUnavailable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Single-shot HTTP stub: serves canned completions, recording each
    /// request body, until the listener drops.
    fn spawn_stub(replies: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for reply in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let body_start;
                loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        body_start = pos + 4;
                        break;
                    }
                }
                let head = String::from_utf8_lossy(&buf[..body_start]).to_string();
                let length: usize = head
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                    .unwrap();
                while buf.len() < body_start + length {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                }
                seen.push(String::from_utf8_lossy(&buf[body_start..body_start + length]).to_string());
                let payload = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": reply}}]
                })
                .to_string();
                let response = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
            seen
        });
        (url, handle)
    }

    #[test]
    fn verdicts_parse_and_requests_carry_the_template() {
        let (url, handle) = spawn_stub(vec!["True".into(), " False \n".into()]);
        let judge = RemoteJudge::new(url, Some("k".into()), "j".into());
        assert!(judge.judge("1+1", "2", "it is 2").unwrap());
        assert!(!judge.judge("1+1", "2", "it is 3").unwrap());
        let seen = handle.join().unwrap();
        let body: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
        let content = body["messages"][0]["content"].as_str().unwrap();
        assert!(content.contains("question: 1+1"));
        assert!(content.contains("correct answer: 2"));
        assert!(content.contains("it is 2"));
        assert!(content.starts_with("Given a math question"));
    }

    #[test]
    fn garbage_verdicts_and_dead_endpoints_surface_as_unavailable() {
        let (url, handle) = spawn_stub(vec!["maybe?".into()]);
        let judge = RemoteJudge::new(url, None, "j".into());
        assert_eq!(judge.judge("q", "2", "text").unwrap_err(), Error::JudgeUnavailable);
        handle.join().unwrap();

        let dead = RemoteJudge::new("http://127.0.0.1:9/x".into(), None, "j".into());
        assert_eq!(dead.judge("q", "2", "text").unwrap_err(), Error::JudgeUnavailable);
    }

    #[test]
    fn verdict_parser_accepts_common_shapes() {
        assert_eq!(parse_verdict("True"), Some(true));
        assert_eq!(parse_verdict("true\n"), Some(true));
        assert_eq!(parse_verdict("False."), Some(false));
        assert_eq!(parse_verdict("TRUE"), Some(true));
        assert_eq!(parse_verdict("the answer is correct"), None);
        assert_eq!(parse_verdict(""), None);
    }
}
