mod common;

use std::sync::atomic::Ordering;

use common::protocol::{
    all_commands, counting_registry, expected_transcript, random_chunks, random_script, ChunkedMock,
};
use meff_core::backend::{AdapterRef, GenerationRequest};
use meff_core::fintools::ToolKind;
use meff_core::toolcall::{
    parse_calls, render_call, run_tool_loop, LoopLimits, ScannerState, ARROW,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scan_all(chunks: &[String]) -> (String, Vec<(String, String)>) {
    let mut scanner = ScannerState::new();
    let mut rebuilt = String::new();
    let mut commands = Vec::new();
    for chunk in chunks {
        let mut input = chunk.clone();
        loop {
            let out = scanner.scan_chunk(&input);
            rebuilt.push_str(&out.emitted);
            match out.pending {
                Some(cmd) => {
                    rebuilt.push_str(&cmd.raw);
                    commands.push((cmd.tool.name().to_string(), cmd.args));
                    input = out.rest;
                }
                None => break,
            }
        }
    }
    rebuilt.push_str(&scanner.finish());
    (rebuilt, commands)
}

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn scanner_loses_nothing_under_any_chunking(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_script(&mut rng);
        let chunks = random_chunks(&mut rng, &text);
        let (rebuilt, commands) = scan_all(&chunks);
        prop_assert_eq!(&rebuilt, &text);
        let reference: Vec<(String, String)> =
            all_commands(&text).into_iter().map(|c| (c.name, c.args)).collect();
        prop_assert_eq!(commands, reference);
    }

    #[test]
    fn tool_loop_closes_each_command_exactly_once(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let script = random_script(&mut rng);
        let (want, calls) = expected_transcript(&script);
        let backend = ChunkedMock::new(&script, seed);
        let (registry, count) = counting_registry();
        let limits = LoopLimits { max_calls: 10_000, max_tokens: 1_000_000 };
        let out = block_on(run_tool_loop(
            &backend,
            GenerationRequest::new("q", AdapterRef::named("lora-computing")),
            &registry,
            limits,
            &mut |_| {},
        )).unwrap();
        prop_assert_eq!(&out.transcript, &want);
        prop_assert_eq!(out.events.len(), calls);
        prop_assert_eq!(count.load(Ordering::SeqCst), calls);
        for ev in &out.events {
            prop_assert_eq!(&out.transcript[ev.resumed_at - 1..ev.resumed_at], "]");
            prop_assert!(out.transcript[ev.command.arrow..].starts_with(ARROW));
        }
    }

    #[test]
    fn text_without_brackets_is_untouched(text in "[^\\[]{0,200}", cut in 1usize..16) {
        let chars: Vec<char> = text.chars().collect();
        let chunks: Vec<String> = chars.chunks(cut).map(|c| c.iter().collect()).collect();
        let (rebuilt, commands) = scan_all(&chunks);
        prop_assert_eq!(rebuilt, text);
        prop_assert!(commands.is_empty());
    }

    #[test]
    fn rendered_calls_parse_back(
        tool in prop::sample::select(ToolKind::ALL.to_vec()),
        args in "[0-9a-z+*/=;,. \\[]{0,30}",
        result in "[0-9a-zA-Z.:=, -]{0,20}",
    ) {
        let args = args.replace("->", "-");
        let text = render_call(tool, &args, &result);
        let calls = parse_calls(&text);
        prop_assert_eq!(calls.len(), 1);
        prop_assert_eq!(calls[0].tool, tool);
        prop_assert_eq!(&calls[0].args, &args);
        prop_assert_eq!(&calls[0].result, &result);
    }
}

#[test]
fn budget_exhaustion_keeps_partial_transcript() {
    let script = "一[Calculator(1)→x]二[Counter(1,2)→y]三";
    let backend = ChunkedMock::new(script, 1);
    let (registry, count) = counting_registry();
    let out = block_on(run_tool_loop(
        &backend,
        GenerationRequest::new("q", AdapterRef::named("a")),
        &registry,
        LoopLimits { max_calls: 1, max_tokens: 1000 },
        &mut |_| {},
    ))
    .unwrap();
    assert_eq!(out.transcript, "一[Calculator(1)→Ca:1]二[Counter(1,2)→");
    assert_eq!(count.load(Ordering::SeqCst), 1);
    assert_eq!(out.stop, meff_core::toolcall::LoopStop::CallBudgetExceeded);
}
