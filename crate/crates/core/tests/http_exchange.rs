use burstshape::media_http::*;

const EXCHANGE: &str = include_str!("data/exchange.txt");

fn messages() -> Vec<String> {
    split_messages(EXCHANGE)
}

#[test]
fn every_message_round_trips() {
    let msgs = messages();
    assert_eq!(msgs.len(), 12);
    for m in &msgs {
        let rendered = if m.starts_with("GET") {
            render_request(&parse_request(m).unwrap())
        } else {
            render_response(&parse_response(m).unwrap())
        };
        assert_eq!(rendered, to_crlf(m), "{m}");
        // CRLF input parses to the same thing
        if !m.starts_with("GET") {
            assert_eq!(parse_response(&to_crlf(m)).unwrap(), parse_response(m).unwrap());
        }
    }
}

#[test]
fn exchange_semantics() {
    let msgs = messages();
    let starts: Vec<u64> = msgs.iter().filter(|m| m.starts_with("GET")).map(|m| parse_request(m).unwrap().range_start_s).collect();
    assert_eq!(starts, vec![0, 0, 59, 100, 100, 135]);

    let responses: Vec<StreamResponse> = msgs.iter().filter(|m| !m.starts_with("GET")).map(|m| parse_response(m).unwrap()).collect();
    let status: Vec<u16> = responses.iter().map(|r| r.status).collect();
    assert_eq!(status, vec![200, 200, 206, 200, 206, 204]);
    assert_eq!(responses[2].reason, "OK Partial Content");
    assert_eq!(responses[2].header("Content-Range").unwrap().value, "seconds 60-99/40 ");
    assert_eq!(responses[2].content_range, Some(ContentRange::new(RangeUnit::Seconds, 60, 99)));
    assert_eq!(responses[4].content_length, Some(10_000_000));
    let rates: Vec<u64> = responses.iter().map(|r| r.stream_info.as_ref().unwrap().bitrate_bps).collect();
    assert_eq!(rates, vec![700_000, 700_000, 700_000, 2_000_000, 2_000_000, 2_000_000]);
    assert_eq!(responses[3].stream_info.as_ref().unwrap().height, Some(720));
}

#[test]
fn client_follows_exchange() {
    let msgs = messages();
    let responses: Vec<StreamResponse> = msgs.iter().filter(|m| !m.starts_with("GET")).map(|m| parse_response(m).unwrap()).collect();
    let mut client = ReferenceClient::new("/BigBuckBunny", "www.service-x.com", Some("ANDROID"));
    client.on_response(&responses[0], 128_000);
    assert_eq!(client.next_start_s(), 0);
    client.on_response(&responses[1], responses[1].body_len());
    assert_eq!(client.next_start_s(), 60);
    client.on_response(&responses[2], responses[2].body_len());
    assert_eq!(client.next_start_s(), 100);
    client.on_response(&responses[3], 128_000);
    assert_eq!(client.next_start_s(), 100);
    // only 35 s of the 40 s chunk arrive
    client.on_response(&responses[4], 35 * 2_000_000 / 8);
    assert_eq!(client.next_start_s(), 135);
    let req = client.request();
    assert_eq!(req.range_start_s, 135);
    assert_eq!(parse_request(&render_request(&req)).unwrap().range_start_s, 135);
    client.on_response(&responses[5], 0);
    assert_eq!(client.next_start_s(), 135);
}
