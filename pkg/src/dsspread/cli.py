"""``simulate`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from .campaign import format_csv, run_ber_campaign, run_crlb_curve, run_nmse_campaign, write_csv
from .config import PRESETS, ConfigError, load_config

log = logging.getLogger("dsspread")

CAMPAIGNS = {
    "nmse": run_nmse_campaign,
    "ber": run_ber_campaign,
    "crlb": run_crlb_curve,
}


def _snr_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Monte Carlo campaigns for delay-scale channel estimation and detection.",
        epilog="presets: " + ", ".join(PRESETS),
    )
    p.add_argument("campaign", choices=sorted(CAMPAIGNS))
    p.add_argument("--config", required=True, help="YAML file or preset name")
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", type=_snr_list, help="comma-separated SNR list in dB")
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, snr_db=args.snr, trials=args.trials, out=args.out)
        cfg.validate(args.campaign)
        log.info("running %s campaign: %d trials x %d SNR points", args.campaign, cfg.trials, len(cfg.snr_db))
        records = CAMPAIGNS[args.campaign](cfg, workers=max(1, args.workers))
        if cfg.out:
            write_csv(records, cfg.out)
        else:
            sys.stdout.write(format_csv(records))
    except ConfigError as exc:
        print(f"simulate: configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
