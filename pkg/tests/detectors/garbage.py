import sys

for _ in sys.stdin:
    print("not json", flush=True)
