use serde_json::json;
use webgen_core::gateway::{
    request_body, ChatModel, ChatTurn, GatewayError, HttpGateway, MockScript, MockServer, ModelEndpoint, ModelRole,
    ScriptedResponse,
};

fn endpoint(server: &MockServer, model: &str, role: ModelRole) -> ModelEndpoint {
    let mut e = ModelEndpoint::new(server.url(), model, role);
    e.retry.initial_backoff_ms = 1;
    e
}

async fn server(responses: Vec<ScriptedResponse>) -> MockServer {
    MockServer::start(MockScript::new(responses)).await.unwrap()
}

#[tokio::test]
async fn canned_reply_is_returned_verbatim() {
    let s = server(vec![ScriptedResponse::reply("  <h1>exact</h1>\n")]).await;
    let gw = HttpGateway::new();
    let c = gw
        .complete(&endpoint(&s, "coder", ModelRole::CodingLlm), &[ChatTurn::user("hi")])
        .await
        .unwrap();
    assert_eq!(c.text, "  <h1>exact</h1>\n");
    assert_eq!(c.attempts, 1);
    assert!(c.usage.total_tokens > 0);
    let log = s.requests();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].body["temperature"], json!(0.5));
    assert_eq!(log[0].body["messages"][0], json!({"role": "user", "content": "hi"}));
}

#[tokio::test]
async fn two_failures_then_success_takes_three_attempts() {
    let s = server(vec![
        ScriptedResponse::error(503, json!({"message": "overloaded"})),
        ScriptedResponse::error(429, json!({"message": "slow down"})),
        ScriptedResponse::reply("third time"),
    ])
    .await;
    let gw = HttpGateway::new();
    let c = gw
        .complete(&endpoint(&s, "coder", ModelRole::CodingLlm), &[ChatTurn::user("x")])
        .await
        .unwrap();
    assert_eq!((c.text.as_str(), c.attempts), ("third time", 3));
    assert_eq!(s.requests().len(), 3);
    let records = gw.ledger().records();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].attempts, 3);
    assert!(records[0].ok);
}

#[tokio::test]
async fn exhausted_retries_report_last_status() {
    let s = server(vec![
        ScriptedResponse::error(500, json!({"message": "a"})),
        ScriptedResponse::error(502, json!({"message": "b"})),
        ScriptedResponse::error(503, json!({"message": "c"})),
        ScriptedResponse::reply("never reached"),
    ])
    .await;
    let gw = HttpGateway::new();
    let err = gw
        .complete(&endpoint(&s, "coder", ModelRole::CodingLlm), &[ChatTurn::user("x")])
        .await
        .unwrap_err();
    assert!(
        matches!(
            err,
            GatewayError::Exhausted {
                attempts: 3,
                last_status: Some(503),
                ..
            }
        ),
        "{err:?}"
    );
    assert_eq!(s.remaining(), 1);
    assert!(!gw.ledger().records()[0].ok);
}

#[tokio::test]
async fn context_length_is_a_distinct_error_and_not_retried() {
    let s = server(vec![ScriptedResponse::error(
        400,
        json!({"message": "This model's maximum context length is 8192 tokens", "code": "context_length_exceeded"}),
    )])
    .await;
    let err = HttpGateway::new()
        .complete(&endpoint(&s, "coder", ModelRole::CodingLlm), &[ChatTurn::user("x")])
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::ContextLength(_)), "{err:?}");
    assert_eq!(s.requests().len(), 1);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let s = server(vec![ScriptedResponse::error(401, json!({"message": "bad key"}))]).await;
    let err = HttpGateway::new()
        .complete(&endpoint(&s, "coder", ModelRole::CodingLlm), &[ChatTurn::user("x")])
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::Rejected { status: 401, .. }));
}

#[tokio::test]
async fn matcher_routes_by_model_and_substring() {
    let s = server(vec![
        ScriptedResponse::reply("grade reply")
            .for_model("vlm")
            .when_contains("Grade"),
        ScriptedResponse::reply("coder reply").for_model("coder"),
        ScriptedResponse::reply("vlm reply").for_model("vlm"),
    ])
    .await;
    let gw = HttpGateway::new();
    let vlm = endpoint(&s, "vlm", ModelRole::FeedbackVlm);
    let coder = endpoint(&s, "coder", ModelRole::CodingLlm);
    assert_eq!(
        gw.complete(&vlm, &[ChatTurn::user("Describe it")]).await.unwrap().text,
        "vlm reply"
    );
    assert_eq!(
        gw.complete(&coder, &[ChatTurn::user("Grade it")]).await.unwrap().text,
        "coder reply"
    );
    assert_eq!(
        gw.complete(&vlm, &[ChatTurn::user("Grade it")]).await.unwrap().text,
        "grade reply"
    );
    let served: Vec<Option<usize>> = s.requests().iter().map(|r| r.served_by).collect();
    assert_eq!(served, vec![Some(2), Some(1), Some(0)]);
}

#[tokio::test]
async fn exhausted_script_answers_500() {
    let s = server(vec![]).await;
    let resp = reqwest::Client::builder()
        .no_proxy()
        .build()
        .unwrap()
        .post(format!("{}/chat/completions", s.url()))
        .json(&json!({"model": "m", "messages": []}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 500);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert!(body["error"]["message"].as_str().unwrap().contains("exhausted"));
    assert_eq!(s.requests()[0].served_by, None);
}

#[tokio::test]
async fn images_only_go_to_the_vlm() {
    let s = server(vec![ScriptedResponse::reply("seen")]).await;
    let gw = HttpGateway::new();
    let turn = ChatTurn::user_with_png("look", b"\x89PNG");
    let err = gw
        .complete(
            &endpoint(&s, "coder", ModelRole::CodingLlm),
            std::slice::from_ref(&turn),
        )
        .await
        .unwrap_err();
    assert_eq!(err, GatewayError::ImageOnTextEndpoint);
    assert!(s.requests().is_empty());
    gw.complete(&endpoint(&s, "vlm", ModelRole::FeedbackVlm), &[turn])
        .await
        .unwrap();
    let url = s.requests()[0].body["messages"][0]["content"][0]["image_url"]["url"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(url.starts_with("data:image/png;base64,"));
    assert_eq!(
        gw.complete(&endpoint(&s, "vlm", ModelRole::FeedbackVlm), &[])
            .await
            .unwrap_err(),
        GatewayError::EmptyRequest
    );
}

#[test]
fn identical_turns_serialize_identically() {
    let e = ModelEndpoint::new("http://x/v1", "m", ModelRole::FeedbackVlm);
    let turns = vec![
        ChatTurn::user("a"),
        ChatTurn::assistant("b"),
        ChatTurn::user_with_png("c", &[1, 2, 3]),
    ];
    assert_eq!(request_body(&e, &turns), request_body(&e, &turns.clone()));
}
