"""Command-line entry point.

    python listreward.py score  --dataset d.jsonl --responses r.jsonl --reward list-mrr --out out/
    python listreward.py eval   --dataset d.jsonl --responses r.jsonl --judge --out out/
    python listreward.py convert --dataset mcq.jsonl --threshold 0.7 --out converted/
    python listreward.py reval-multi --dataset multi.jsonl --responses r.jsonl --out out/
    python listreward.py serve  --dataset d.jsonl --port 8080
    python listreward.py report out/reports.json
    python listreward.py render --dataset d.jsonl --template list_cot --out prompts/
    python listreward.py distill --dataset d.jsonl --template list_cot --out sft/

Exit codes: 0 success, 2 schema or configuration error, 3 judge/LLM unavailable.
"""
import argparse
import contextlib
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from tqdm import tqdm

import evaluate
import preprocess_data
import serve
from data_utils.common_utils import (create_logger, mkdir, read_json, write_json,
                                     write_jsonl, write_txt)
from data_utils.data_class import AnswerFormat
from data_utils.prompts import (asset_checksums, decoding_preset, render_prompt,
                                template_paths)
from data_utils.reader_dataset import ReaderDataset, load_responses
from data_utils.rejection import ResponseGenerator, distill_records
from reward_utils import parser
from reward_utils.judge import JudgeProtocol, JudgeRequest, JudgeVerdict, LLMJudge, judge_many
from reward_utils.rewards import (RewardConfig, RewardKind, config_for_record, score_response,
                                  summarize_outcomes, sweep_length_penalty)
from utils.errors import (CardinalityMismatch, ConfigError, EmptySet, IncompatibleFormat,
                          JudgeUnavailable, ReplyParseError, SchemaError, TemplateMissing,
                          TransportError)
from utils.llm_client import ChatCompletionsClient, JudgeClientConfig
from utils.manifest import STATUS_FAILED, RunManifest
from utils.options import (add_conversion_params, add_data_params, add_generation_params,
                           add_judge_params, add_output_params, add_reward_params,
                           add_service_params, config_section, judge_overrides, load_config,
                           set_seed)
from utils.utils import print_args, print_section_bar

logger = logging.getLogger()

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_JUDGE = 3

SCHEMA_ERRORS = (SchemaError, ConfigError, IncompatibleFormat, TemplateMissing, EmptySet,
                 CardinalityMismatch)
JUDGE_ERRORS = (JudgeUnavailable, ReplyParseError, TransportError)

OUTCOMES_FILE = 'outcomes.jsonl'
SUMMARY_FILE = 'summary.json'
SWEEP_FILE = 'sweep.json'
REPORTS_FILE = 'reports.json'
TABLE_FILE = 'report.txt'


def _require(args, *names):
    for name in names:
        if not getattr(args, name, None):
            raise ConfigError(f'--{name.replace("_", "-")} is required for {args.command}')


@contextlib.contextmanager
def run_manifest(args, config, inputs=(), assets=()):
    """Writes manifest.json into --out: FAILED when the body raises, OK otherwise."""
    manifest = RunManifest.start(args.command, config, inputs=inputs, assets=assets)
    try:
        yield manifest
    except BaseException as e:
        manifest.finish(STATUS_FAILED, error=e)
        manifest.save(args.out)
        raise
    manifest.finish()
    manifest.save(args.out)


def build_client(args, section='judge', endpoint=None, model_name=None):
    overrides = judge_overrides(args)
    if section != 'judge':
        overrides.update(endpoint=endpoint, model_name=model_name)
    client_config = JudgeClientConfig.from_mapping(
        config_section(args.loaded_config, section), **overrides)
    return args.client_factory(client_config)


def build_judge(args, rng):
    client = build_client(args)
    return LLMJudge(client, client.config, template_dir=args.judge_templates, rng=rng,
                    default_protocol=args.judge_protocol)


def _reward_setup(args, judge):
    kind = args.list_reward if args.reward == 'mixed' else args.reward
    config = RewardConfig(
        kind=kind, use_format_reward=args.format_reward, length_lambda=args.length_lambda,
        judge=judge if RewardKind.parse(kind) is RewardKind.LIST_JUDGE_MRR else None)
    return config, args.reward == 'mixed'


def _needs_judge(args):
    kind = args.list_reward if args.reward == 'mixed' else args.reward
    return RewardKind.parse(kind) is RewardKind.LIST_JUDGE_MRR


def _load_pairs(args):
    dataset = ReaderDataset.from_file(args.dataset, args.expected_format)
    return dataset, dataset.resolve(load_responses(args.responses))


def cmd_score(args):
    _require(args, 'dataset', 'responses', 'out')
    rng = set_seed(args)
    dataset, pairs = _load_pairs(args)
    judge = build_judge(args, rng) if _needs_judge(args) else None
    config, mixed = _reward_setup(args, judge)
    configs = [config_for_record(record, config) if mixed else config for _, record in pairs]

    snapshot = dict(config.snapshot(), reward=args.reward, seed=args.seed)
    assets = judge.template_paths() if judge is not None else ()
    with run_manifest(args, snapshot, inputs=[args.dataset, args.responses], assets=assets):
        def score(i):
            row, record = pairs[i]
            return score_response(row.raw, record, configs[i])

        workers = judge.config.max_in_flight if judge is not None else 1
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(tqdm(executor.map(score, range(len(pairs))),
                                 total=len(pairs), desc='scoring'))

        write_jsonl(
            (dict(outcome.to_dict(), id=row.record_id, line=row.line)
             for (row, _), outcome in zip(pairs, outcomes)),
            os.path.join(args.out, OUTCOMES_FILE))
        summary = summarize_outcomes(outcomes)
        write_json(summary, os.path.join(args.out, SUMMARY_FILE))
        print_section_bar('SUMMARY')
        for key, value in sorted(summary.items()):
            logger.info(f'{key:<20} {value}')

        if args.lambda_sweep:
            if mixed or config.kind not in (RewardKind.LIST_ACC, RewardKind.LIST_MRR):
                raise ConfigError('--lambda-sweep needs --reward list-acc or list-mrr')
            sweep = sweep_length_penalty(
                [(row.raw, record) for row, record in pairs], config, args.lambda_sweep)
            write_json(sweep, os.path.join(args.out, SWEEP_FILE))
    return EXIT_OK


_EXACT_KIND = {
    AnswerFormat.MCQ: RewardKind.MCQ,
    AnswerFormat.QA: RewardKind.QA,
    AnswerFormat.LIST: RewardKind.LIST_MRR,
}


def exact_eval_records(pairs):
    records = []
    for row, record in pairs:
        outcome = score_response(
            row.raw, record, RewardConfig(kind=_EXACT_KIND[record.answer_format]))
        items = None
        if record.answer_format is AnswerFormat.LIST:
            _, body = parser.answer_body(row.raw)
            items = parser.parse_ranked_list(body)
        records.append(evaluate.make_eval_record(record, row.raw, outcome, items))
    return records


def judge_requests(pairs, eval_records, protocol):
    """One request per open-ended record; None where there is nothing to judge."""
    requests = []
    for (row, record), eval_record in zip(pairs, eval_records):
        if record.answer_format is AnswerFormat.LIST:
            items = eval_record.list_items
            requests.append(
                JudgeRequest(record.question, record.gold, items, protocol) if items else None)
        else:
            region = parser.parse_response(row.raw, AnswerFormat.QA).answer_region.strip()
            requests.append(
                JudgeRequest(record.question, record.gold, (region,), JudgeProtocol.QA_ACC)
                if region else None)
    return requests


def judged_verdicts(requests, judge):
    pending = [req for req in requests if req is not None]
    answers = iter(judge_many(pending, judge, progress=True))
    empty = JudgeVerdict(rank=None, equivalent=False, raw_reply='', parse_ok=True)
    return [next(answers) if req is not None else empty for req in requests]


def _format_groups(pairs, eval_records):
    groups = {}
    for pair, eval_record in zip(pairs, eval_records):
        groups.setdefault(eval_record.answer_format, []).append((pair, eval_record))
    return groups


def build_reports(groups, with_judge):
    reports = {}
    for fmt in AnswerFormat:
        if fmt not in groups:
            continue
        eval_records = [e for _, e in groups[fmt]]
        judged = with_judge and fmt is not AnswerFormat.MCQ
        per_benchmark = evaluate.reports_by_benchmark(eval_records, with_judge=judged)
        reports[fmt.value] = {
            'with_judge': judged,
            'benchmarks': {name: r.to_dict() for name, r in per_benchmark.items()},
            'average': evaluate.aggregate(per_benchmark).to_dict(),
        }
    return reports


def render_reports(reports):
    sections = []
    for fmt in (f.value for f in AnswerFormat if f.value in reports):
        block = reports[fmt]
        rows = [evaluate.MetricReport.from_dict(d) for _, d in sorted(block['benchmarks'].items())]
        rows.append(evaluate.MetricReport.from_dict(block['average']))
        sections.append(f'[{fmt}]\n' + evaluate.render_table(rows, with_judge=block['with_judge']))
    return '\n'.join(sections)


def write_reports(args, reports):
    write_json(reports, os.path.join(args.out, REPORTS_FILE))
    table = render_reports(reports)
    write_txt(table, os.path.join(args.out, TABLE_FILE))
    return table


def cmd_eval(args):
    _require(args, 'dataset', 'responses', 'out')
    rng = set_seed(args)
    _, pairs = _load_pairs(args)
    judge = build_judge(args, rng) if args.judge else None
    snapshot = {'judge': judge.snapshot() if judge is not None else None, 'seed': args.seed}
    assets = judge.template_paths([judge.default_protocol, JudgeProtocol.QA_ACC]) if judge else ()

    with run_manifest(args, snapshot, inputs=[args.dataset, args.responses], assets=assets):
        eval_records = exact_eval_records(pairs)
        groups = _format_groups(pairs, eval_records)
        # exact-match reports land on disk before any judge call
        table = write_reports(args, build_reports(groups, with_judge=False))
        if judge is not None:
            for fmt, members in groups.items():
                if fmt is AnswerFormat.MCQ:
                    continue
                member_pairs = [p for p, _ in members]
                member_records = [e for _, e in members]
                requests = judge_requests(member_pairs, member_records, judge.default_protocol)
                attached = evaluate.attach_judge(member_records, judged_verdicts(requests, judge))
                groups[fmt] = list(zip(member_pairs, attached))
            table = write_reports(args, build_reports(groups, with_judge=True))
        print_section_bar('REPORT')
        for line in table.splitlines():
            logger.info(line)
    return EXIT_OK


def cmd_convert(args):
    _require(args, 'dataset', 'out')
    rng = set_seed(args)
    client = build_client(args)
    params = preprocess_data.ConversionParams(
        threshold=args.threshold,
        temperature=decoding_preset('conversion').temperature,
        max_retries=client.config.max_retries,
        workers=client.config.max_in_flight,
        backoff_base=client.config.backoff_base,
        backoff_max=client.config.backoff_max)
    snapshot = {'threshold': params.threshold, 'temperature': params.temperature,
                'client': client.config.snapshot(), 'resume': args.resume, 'seed': args.seed}
    with run_manifest(args, snapshot, inputs=[args.dataset],
                      assets=[preprocess_data.CONVERSION_PROMPT]):
        counts = preprocess_data.convert_file(
            args.dataset, args.out, client, params, resume=args.resume, rng=rng)
        write_json(counts, os.path.join(args.out, SUMMARY_FILE))
    return EXIT_OK


def cmd_reval_multi(args):
    _require(args, 'dataset', 'responses', 'out')
    set_seed(args)
    _, pairs = _load_pairs(args)
    for row, record in pairs:
        if record.answer_format is AnswerFormat.MCQ:
            raise IncompatibleFormat(f'{record.record_id}: multi-valid scoring needs open answers')
        if not record.valid_answers:
            raise SchemaError(row.line, 'valid_answers', f'record {record.record_id} has none')

    with run_manifest(args, {'seed': args.seed}, inputs=[args.dataset, args.responses]):
        rows, outcomes, sizes = [], [], []
        for row, record in pairs:
            kind = RewardKind.LIST_MRR if record.answer_format is AnswerFormat.LIST else RewardKind.QA
            outcome = score_response(row.raw, record, RewardConfig(kind=kind))
            parsed = parser.parse_response(row.raw, record.answer_format)
            items = parsed.items if record.answer_format is AnswerFormat.LIST else (
                (parsed.answer_region.strip(),) if parsed.answer_region.strip() else ())
            eval_record = evaluate.make_eval_record(record, row.raw, outcome, items)
            result = evaluate.multi_valid_reclassify(eval_record, record.valid_answers)
            outcomes.append(result)
            sizes.append(len({parser.normalize(v) for v in record.valid_answers}))
            rows.append(dict(result.to_dict(), id=record.record_id, line=row.line))
        tallies = evaluate.tally_multi_valid(outcomes, sizes)
        write_jsonl(rows, os.path.join(args.out, 'multi_valid.jsonl'))
        write_json(tallies, os.path.join(args.out, 'tallies.json'))
        print_section_bar('MULTI-VALID')
        for group in ('categories', 'coverage', 'correct_kept_coverage'):
            for key, value in tallies[group].items():
                logger.info(f'{group:<22} {key:<20} {value}')
        logger.info(f'{"multi_valid_all_covered":<22} {tallies["multi_valid_all_covered"]}')
    return EXIT_OK


def cmd_serve(args):
    rng = set_seed(args)
    config = args.loaded_config
    reward = config_section(config, 'reward')
    settings = serve.ServiceSettings.from_mapping(
        dict(config_section(config, 'service'), **reward),
        host=args.host, port=args.port)
    dataset = ReaderDataset.from_file(args.dataset, args.expected_format) if args.dataset else None
    judge = None
    if args.judge or 'judge' in config:
        judge = build_judge(args, rng)
    serve.run(serve.Scorer(settings, dataset, judge), settings.host, settings.port)
    return EXIT_OK


def cmd_report(args):
    blocks = {}
    for path in args.reports:
        blocks.update(read_json(path))
    table = render_reports(blocks)
    if args.out:
        mkdir(args.out)
        write_txt(table, os.path.join(args.out, TABLE_FILE))
    sys.stdout.write(table)
    return EXIT_OK


def cmd_render(args):
    _require(args, 'dataset', 'out')
    dataset = ReaderDataset.from_file(args.dataset, args.expected_format)
    decoding = decoding_preset(args.preset or 'eval')
    snapshot = {'template': args.template, 'decoding': decoding.to_dict()}
    with run_manifest(args, snapshot, inputs=[args.dataset],
                      assets=template_paths(args.template)):
        rows = [{
            'id': record.record_id,
            'benchmark': record.benchmark,
            'template': args.template,
            'prompt': render_prompt(args.template, record),
            'decoding': decoding.to_dict(),
        } for record in dataset]
        write_jsonl(rows, os.path.join(args.out, 'prompts.jsonl'))
        logger.info(f'Rendered {len(rows)} prompts, assets {asset_checksums([args.template])}')
    return EXIT_OK


def cmd_distill(args):
    _require(args, 'dataset', 'out')
    rng = set_seed(args)
    dataset = ReaderDataset.from_file(args.dataset, args.expected_format)
    needs_judge = any(r.answer_format is not AnswerFormat.MCQ for r in dataset)
    judge = build_judge(args, rng) if needs_judge else None
    generator_client = build_client(
        args, section='generator', endpoint=args.generator_endpoint,
        model_name=args.generator_model)
    decoding = decoding_preset(args.preset or 'distill')
    generator = ResponseGenerator(generator_client, args.template, decoding,
                                  max_retries=generator_client.config.max_retries, rng=rng)
    snapshot = {'template': args.template, 'decoding': decoding.to_dict(), 'budget': args.budget,
                'generator': generator_client.config.snapshot(),
                'judge': judge.snapshot() if judge is not None else None, 'seed': args.seed}
    assets = list(template_paths(args.template))
    if judge is not None:
        assets += judge.template_paths([JudgeProtocol.SFT_VALIDATE, JudgeProtocol.SFT_VALIDATE_LIST])
    with run_manifest(args, snapshot, inputs=[args.dataset], assets=assets):
        rows, rejected = distill_records(dataset, generator, judge=judge, budget=args.budget,
                                         workers=args.workers, progress=True)
        write_jsonl(rows, os.path.join(args.out, 'sft.jsonl'))
        write_jsonl(({'id': i} for i in rejected), os.path.join(args.out, 'rejected.jsonl'))
        logger.info(f'Accepted {len(rows)} records, rejected {len(rejected)}')
    return EXIT_OK


def build_parser():
    arg_parser = argparse.ArgumentParser(
        prog='listreward', description='Verifiable rewards and metrics for ranked-list answers')
    sub = arg_parser.add_subparsers(dest='command')
    sub.required = True

    def command(name, func, *groups, **kwargs):
        p = sub.add_parser(name, **kwargs)
        for group in groups:
            group(p)
        p.set_defaults(func=func)
        return p

    command('score', cmd_score, add_data_params, add_reward_params, add_judge_params,
            add_output_params, help='Score responses with a reward function.')
    command('eval', cmd_eval, add_data_params, add_judge_params, add_output_params,
            help='Acc/MRR/CP/LL/VLL reports per benchmark and macro average.')
    command('convert', cmd_convert, add_data_params, add_judge_params, add_conversion_params,
            add_output_params, help='Convert an MCQ dataset to open-ended questions.')
    command('reval-multi', cmd_reval_multi, add_data_params, add_output_params,
            help='Re-score list answers against multiple valid answers.')
    command('serve', cmd_serve, add_data_params, add_judge_params, add_service_params,
            add_output_params, help='Run the HTTP scoring service.')
    report = command('report', cmd_report, add_output_params,
                     help='Re-render report tables from reports.json files.')
    report.add_argument('reports', nargs='+')
    command('render', cmd_render, add_data_params, add_generation_params, add_output_params,
            help='Render prompts for a template with its decoding preset.')
    command('distill', cmd_distill, add_data_params, add_generation_params, add_judge_params,
            add_output_params, help='Rejection-sampled distillation data.')
    return arg_parser


def main(argv=None, client_factory=None):
    args = build_parser().parse_args(argv)
    args.client_factory = client_factory or ChatCompletionsClient
    log_file = None
    if args.out:
        mkdir(args.out)
        log_file = os.path.join(args.out, f'{args.command}.log')
    create_logger(to_disk=log_file is not None, log_file=log_file)
    print_args(args)
    try:
        args.loaded_config = load_config(args)
        return args.func(args)
    except SCHEMA_ERRORS as e:
        logger.error(f'{args.command}: {e}')
        return EXIT_SCHEMA
    except JUDGE_ERRORS as e:
        logger.error(f'{args.command}: LLM endpoint unavailable: {e}')
        return EXIT_JUDGE


if __name__ == '__main__':
    sys.exit(main())
