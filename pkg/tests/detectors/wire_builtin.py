"""Wire-protocol wrapper around the built-in plaque detector."""
import json
import sys

import numpy as np
from PIL import Image

from reflectpriv.color import decode_u8
from reflectpriv.detect import BuiltinDetector

det = BuiltinDetector()
for line in sys.stdin:
    req = json.loads(line)
    rgb = decode_u8(np.asarray(Image.open(req["rgb_path"]).convert("RGB")))
    regions = [r.to_json() for r in det.detect_image(rgb, req["frame_id"])]
    print(json.dumps({"frame_id": req["frame_id"], "regions": regions}), flush=True)
