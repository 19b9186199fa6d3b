"""Stand-in object detector.

Input: a frame file whose first line is a JSON header such as
{"frame": "f7", "people": 6, "cars": 1}; the rest is opaque padding.
Output: one NDJSON tuple per detection, named by label, value = confidence,
unit = frame id, plus a sidecar setting batch.count.
"""

import hashlib
import json
import sys
import time


def detections(header: dict):
    frame = str(header.get("frame", "?"))
    seed = hashlib.sha256(frame.encode()).digest()
    out = []
    i = 0
    for label, key in (("person", "people"), ("car", "cars")):
        for _ in range(int(header.get(key, 0))):
            conf = 0.5 + seed[i % len(seed)] / 512.0
            i += 1
            out.append({"n": label, "v": round(conf, 4), "u": frame, "t": int(header.get("t", 0))})
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    src, dst = argv[0], argv[1]
    with open(src, "rb") as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except ValueError:
        print(f"{src}: frame header is not JSON", file=sys.stderr)
        return 3
    delay_ms = float(header.get("delay_ms", 0))
    if delay_ms:
        time.sleep(delay_ms / 1000.0)
    dets = detections(header)
    with open(dst, "w") as fh:
        for d in dets:
            fh.write(json.dumps(d) + "\n")
    attrs = {"batch.count": str(len(dets)), "frame.id": str(header.get("frame", ""))}
    with open(dst + ".attrs.json", "w") as fh:
        json.dump(attrs, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
