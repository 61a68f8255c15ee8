# SPDX-License-Identifier: Apache-2.0
"""cpl-export: export feature banks or serve the text encoder."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbones import make_backbone
from .export import ExportJob, ImageItem, export_features
from .server import TcpServer, serve_stdio


def _backbone_spec(args) -> dict:
    spec = json.loads(args.backbone_json) if args.backbone_json else {}
    spec.setdefault("kind", args.backbone)
    if args.seed is not None:
        spec.setdefault("seed", args.seed)
    return spec


def load_job(path: Path) -> ExportJob:
    j = json.loads(Path(path).read_text(encoding="utf-8"))
    base = Path(path).parent
    images = [
        ImageItem(i["id"], int(i["class_id"]), i.get("split", "train"), str(base / i["path"]))
        for i in j["images"]
    ]
    words = []
    if "lexicon" in j:
        for line in (base / j["lexicon"]).read_text(encoding="utf-8").splitlines():
            if line.strip():
                word, _, cat = line.partition("\t")
                words.append((word.strip(), cat.strip() or "other"))
    return ExportJob(
        dataset_name=j["dataset_name"],
        class_names=list(j["class_names"]),
        images=images,
        out_dir=base / j.get("out_dir", "."),
        shots_per_class=int(j.get("shots_per_class", 16)),
        seed=int(j.get("seed", 0)),
        lexicon_words=words,
    )


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="cpl-export")
    p.add_argument("--backbone", default="random", choices=["random", "clip"])
    p.add_argument("--backbone-json", default="", help="backbone options as JSON")
    p.add_argument("--seed", type=int, default=None)
    sub = p.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("export", help="write a bank, manifest and lexicon from a job file")
    ex.add_argument("job", type=Path)
    sv = sub.add_parser("serve", help="serve encode_text on stdio or TCP")
    sv.add_argument("--tcp", default="", help="host:port to listen on instead of stdio")
    args = p.parse_args(argv)

    try:
        backbone = make_backbone(_backbone_spec(args))
        if args.command == "export":
            written = export_features(load_job(args.job), backbone)
            for kind, path in written.items():
                print(f"wrote {kind} {path}")
            return 0
        if args.tcp:
            host, _, port = args.tcp.rpartition(":")
            with TcpServer((host or "127.0.0.1", int(port)), backbone) as server:
                print(f"listening on {server.server_address[0]}:{server.server_address[1]}", file=sys.stderr)
                server.serve_forever()
        else:
            serve_stdio(backbone)
        return 0
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
