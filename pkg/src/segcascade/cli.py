"""Command line entry point.

Corpus directories hold ``frames/<uid>.frames`` and/or
``posteriors/<uid>.post`` plus a ``gold.txt`` transcription file.  A cascade
data directory has ``train/`` and ``dev/`` subdirectories of that shape.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import acoustics, corpus, synthetic
from .cascade import (CascadeConfig, decode_corpus, init_model, load_models, run_cascade_decode,
                      run_cascade_train, save_models)
from .features import estimate_bigram_lm, save_model
from .inference import CorpusErrors, density, oracle_error_rate
from .lattice import Alphabet, read_lattice, read_lattice_interned, write_lattice
from .pruning import PruneParams, prune
from .training import Utterance, train_pass

log = logging.getLogger("segcascade")

POST_EXT = ".post"
FRAME_EXT = ".frames"
LAT_EXT = ".lat"


def _files(d: Path, ext: str) -> dict[str, Path]:
    if d.is_file():
        return {d.name[: -len(ext)] if d.name.endswith(ext) else d.stem: d}
    out = {p.name[: -len(ext)]: p for p in sorted(d.glob(f"*{ext}"))}
    if not out:
        raise SystemExit(f"no *{ext} files in {d}")
    return out


def read_posterior_dir(d) -> dict:
    return {uid: acoustics.read_posteriors(p) for uid, p in _files(Path(d), POST_EXT).items()}


def read_lattice_dir(d, alphabet=None) -> dict:
    return {uid: read_lattice(p, alphabet) for uid, p in _files(Path(d), LAT_EXT).items()}


def load_split(d: Path, lattices=None) -> list[Utterance]:
    """Utterances of a corpus directory that has posteriors and gold."""
    posts = read_posterior_dir(d / "posteriors")
    alphabet = next(iter(posts.values())).alphabet
    gold = corpus.load_gold(d / "gold.txt", alphabet)
    return _join(posts, gold, lattices, alphabet)


def _join(posts, gold, lattices, alphabet):
    utts = []
    for uid, g in gold.items():
        if uid not in posts:
            raise SystemExit(f"no posteriors for utterance {uid}")
        lat = None
        if lattices is not None:
            if uid not in lattices:
                raise SystemExit(f"no lattice for utterance {uid}")
            lat = lattices[uid]
        utts.append(Utterance(uid, posts[uid], g, lat))
    return utts


# synth


def cmd_synth_spec(args):
    spec = synthetic.GeneratorSpec(num_labels=args.labels, noise=args.noise,
                                   num_utterances=args.count, seed=args.seed,
                                   min_duration=args.min_duration, max_duration=args.max_duration)
    synthetic.save_spec(spec, args.out)


def cmd_synth_generate(args):
    spec = synthetic.load_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.count is not None:
        spec.num_utterances = args.count
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    utts = synthetic.generate(spec, args.prefix)
    for u in utts:
        acoustics.write_frames(u.frames, out / "frames" / f"{u.uid}{FRAME_EXT}")
    corpus.write_transcriptions(((u.uid, u.gold) for u in utts), out / "gold.txt", spec.alphabet)
    (out / "labels.txt").write_text("\n".join(spec.alphabet) + "\n", encoding="utf-8")
    print(f"wrote {len(utts)} utterances to {out}")


# acoustics


def _labels(path) -> Alphabet:
    return Alphabet(Path(path).read_text(encoding="utf-8").split())


def cmd_acoustics_train(args):
    alphabet = _labels(args.labels)
    frames = {uid: acoustics.read_frames(p) for uid, p in _files(Path(args.frames), FRAME_EXT).items()}
    gold = corpus.load_gold(args.gold, alphabet)
    data = [(frames[uid], synthetic.frame_labels(g)) for uid, g in gold.items()]
    dim = data[0][0].shape[1]
    if args.init:
        clf = acoustics.FrameClassifier.load(args.init)
    else:
        clf = acoustics.FrameClassifier(dim, len(alphabet), args.context_radius)
    hist = acoustics.train_frame_classifier(clf, data, args.epochs, args.step_size,
                                            subsample=args.subsample, seed=args.seed)
    for h in hist:
        print(f"{h.epoch}\t{h.loss:.6f}\t{h.seconds:.3f}\t{h.parity or 'none'}")
    clf.save(args.out)


def cmd_acoustics_classify(args):
    alphabet = _labels(args.labels)
    clf = acoustics.FrameClassifier.load(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    n = 0
    for uid, p in _files(Path(args.frames), FRAME_EXT).items():
        post = clf.posteriors(acoustics.read_frames(p), args.subsample)
        acoustics.write_posteriors(post, out / f"{uid}{POST_EXT}", alphabet)
        n += 1
    print(f"classified {n} utterances in {time.perf_counter() - t0:.3f}s "
          f"({clf.frames_evaluated} frame evaluations)")


# prune


def cmd_prune(args):
    fst, alphabet = read_lattice_interned(args.inp)
    t0 = time.perf_counter()
    out = prune(fst, PruneParams(args.method, args.alpha))
    elapsed = time.perf_counter() - t0
    write_lattice(out, args.out, alphabet)
    print(f"method={args.method}\talpha={args.alpha}\tedges_in={fst.num_edges}\t"
          f"edges_out={out.num_edges}\tvertices_in={fst.num_vertices}\t"
          f"vertices_out={out.num_vertices}\tseconds={elapsed:.6f}")


# train / eval


def cmd_train(args):
    cfg = CascadeConfig.load(args.pass_config)
    i = args.pass_index - 1
    posts = read_posterior_dir(args.posteriors)
    alphabet = next(iter(posts.values())).alphabet
    lattices = read_lattice_dir(args.lattices, alphabet) if args.lattices else None
    train = _join(posts, corpus.load_gold(args.gold, alphabet), lattices, alphabet)
    dev_posts = read_posterior_dir(args.dev_posteriors) if args.dev_posteriors else posts
    dev_lats = read_lattice_dir(args.dev_lattices, alphabet) if args.dev_lattices else lattices
    dev = _join(dev_posts, corpus.load_gold(args.dev, alphabet), dev_lats, alphabet)
    ts = cfg.template_set(i, len(alphabet))
    lm = estimate_bigram_lm([u.gold for u in train], len(alphabet)) if ts.uses("bigram_lm") else None
    model = init_model(cfg, i, len(alphabet), lm, alphabet)
    logf = open(args.log, "a", encoding="utf-8") if args.log else None

    def on_epoch(m, _):
        line = f"{m.epoch}\t{m.train_loss:.6f}\t{m.dev_per:.6f}\t{m.seconds:.3f}"
        print(line)
        if logf:
            logf.write(line + "\n")
            logf.flush()

    model, _ = train_pass(model, train, cfg.passes[i].train, dev=dev,
                          max_duration=cfg.max_duration, on_epoch=on_epoch)
    if logf:
        logf.close()
    save_model(model, args.out_model)
    if lm is not None:
        lm.save(Path(args.out_model).with_suffix(".lm"), alphabet)


def cmd_eval(args):
    cfg = CascadeConfig.load(args.config)
    models = load_models(args.models, cfg)
    posts = read_posterior_dir(args.posteriors)
    alphabet = next(iter(posts.values())).alphabet
    gold = corpus.load_gold(args.gold, alphabet)
    errs = CorpusErrors()
    lines = ["uid\tper\toracle\tdensity\trtf"]
    tot_orc, tot_edges, tot_ref, tot_time, tot_audio = 0, 0, 0, 0.0, 0.0
    for uid, g in gold.items():
        res = run_cascade_decode(models, cfg, post=posts[uid])
        lattice = res.lattice
        st = errs.add(res.path.labels, g.labels)
        orc, _ = oracle_error_rate(lattice, g.labels)
        n = len(g)
        tot_orc += round(orc * n)
        tot_edges += lattice.num_edges
        tot_ref += n
        tot_time += res.total_seconds
        tot_audio += res.audio_seconds
        lines.append(f"{uid}\t{st.distance / n:.6f}\t{orc:.6f}\t{density(lattice, g.labels):.4f}\t"
                     f"{res.total_rtf:.6f}")
    lines.append(f"ALL\t{errs.rate:.6f}\t{tot_orc / tot_ref:.6f}\t{tot_edges / tot_ref:.4f}\t"
                 f"{tot_time / tot_audio:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(lines[-1])


# cascade


def cmd_cascade_train(args):
    cfg = CascadeConfig.load(args.config)
    data = Path(args.data)
    train, dev = load_split(data / "train"), load_split(data / "dev")
    alphabet = cfg.alphabet or train[0].post.alphabet
    out = Path(args.out) if args.out else data / "cascade"
    res = run_cascade_train(cfg, train, dev, out_dir=out, alphabet=alphabet)
    save_models(res.models, out, alphabet)
    rows = ["pass\ttrain_hours\tdev_per\tprune_rtf\tedges_removed\tdensity\toracle_error\tempty"]
    for r in res.reports:
        rows.append(f"{r.index}\t{r.train_seconds / 3600:.6f}\t{r.dev_per:.6f}\t{r.prune_rtf:.6f}\t"
                    f"{r.pruned_fraction:.6f}\t{r.density:.4f}\t{r.oracle_error:.6f}\t{r.empty}")
    (out / "training.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    epochs = ["pass\tepoch\ttrain_loss\tdev_per\tseconds\tsubstituted"]
    for r in res.reports:
        epochs += [f"{r.index}\t{m.epoch}\t{m.train_loss:.6f}\t{m.dev_per:.6f}\t{m.seconds:.3f}\t"
                   f"{m.substituted}" for m in r.metrics]
    (out / "epochs.tsv").write_text("\n".join(epochs) + "\n", encoding="utf-8")
    print("\n".join(rows))


def timing_table(timing: dict) -> str:
    rows = ["stage\trtf"]
    rows += [f"pass{i}\t{v:.6f}" for i, v in enumerate(timing["pass_rtf"], 1)]
    rows += [f"decoding\t{timing['decoding_rtf']:.6f}",
             f"feed_forward\t{timing['feed_forward_rtf']:.6f}",
             f"total\t{timing['total_rtf']:.6f}"]
    return "\n".join(rows) + "\n"


def cmd_cascade_decode(args):
    cfg = CascadeConfig.load(args.config)
    models = load_models(args.models, cfg)
    clf = acoustics.FrameClassifier.load(args.classifier) if args.classifier else None
    inp = Path(args.inp)
    utts = []
    if clf is not None:
        for uid, p in _files(inp, FRAME_EXT).items():
            frames = acoustics.read_frames(p)
            utts.append(Utterance(uid, None, None, frames=frames))
    else:
        utts = [Utterance(uid, post) for uid, post in read_posterior_dir(inp).items()]
    alphabet = cfg.alphabet or models[0].alphabet
    results, _, timing = decode_corpus(models, cfg, utts, classifier=clf)
    items = [(u.uid, r.path) for u, r in zip(utts, results)]
    if args.out:
        corpus.write_transcriptions(items, args.out, alphabet)
    else:
        sys.stdout.write(corpus.format_transcriptions(items, alphabet))
    for u, r in zip(utts, results):
        for flag in r.flags:
            log.warning("%s: %s", u.uid, flag)
    table = timing_table(timing)
    if args.timing:
        Path(args.timing).write_text(table, encoding="utf-8")
    else:
        sys.stderr.write(table)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segcascade", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic corpora").add_subparsers(dest="sub", required=True)
    s = synth.add_parser("spec", help="write a default generator spec")
    s.add_argument("--out", required=True)
    s.add_argument("--labels", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.42)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-duration", type=int, default=1)
    s.add_argument("--max-duration", type=int, default=8)
    s.set_defaults(func=cmd_synth_spec)
    s = synth.add_parser("generate", help="generate frames and gold transcriptions")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--prefix", default="utt")
    s.add_argument("--seed", type=int, help="override the spec's seed")
    s.add_argument("--count", type=int, help="override the utterance count")
    s.set_defaults(func=cmd_synth_generate)

    ac = sub.add_parser("acoustics", help="frame classifier").add_subparsers(dest="sub", required=True)
    s = ac.add_parser("train")
    s.add_argument("--frames", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--labels", required=True, help="label list, one per line")
    s.add_argument("--out", required=True)
    s.add_argument("--init", help="continue from this classifier")
    s.add_argument("--context-radius", type=int, default=0)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--step-size", type=float, default=0.1)
    s.add_argument("--subsample", action="store_true", help="alternate even/odd frame dropping")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_acoustics_train)
    s = ac.add_parser("classify")
    s.add_argument("--model", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--subsample", choices=("none", "even", "odd"), default="none")
    s.set_defaults(func=cmd_acoustics_classify)

    s = sub.add_parser("prune", help="prune one lattice file")
    s.add_argument("--method", choices=("beam", "edge", "vertex"), required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("train", help="train one cascade pass")
    s.add_argument("--pass-config", required=True)
    s.add_argument("--pass", dest="pass_index", type=int, default=1)
    s.add_argument("--lattices", help="lattice directory (dense space if omitted)")
    s.add_argument("--posteriors", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--dev", required=True, help="dev transcription file")
    s.add_argument("--dev-posteriors")
    s.add_argument("--dev-lattices")
    s.add_argument("--out-model", required=True)
    s.add_argument("--log", help="append per-epoch metrics here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="decode and score a corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--posteriors", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    cas = sub.add_parser("cascade", help="multi-pass cascades").add_subparsers(dest="sub", required=True)
    s = cas.add_parser("train")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cascade_train)
    s = cas.add_parser("decode")
    s.add_argument("--config", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--in", dest="inp", required=True,
                   help="posterior file/directory, or frames with --classifier")
    s.add_argument("--classifier")
    s.add_argument("--out")
    s.add_argument("--timing")
    s.set_defaults(func=cmd_cascade_decode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
