/**
 * Latest-wins render scheduling: control changes within the debounce window
 * collapse into a single request, at most one request is in flight, and
 * responses that arrive for anything but the newest request id are dropped.
 */

export const DEBOUNCE_MS = 120;

type Clock = {
  setTimeout: (fn: () => void, ms: number) => ReturnType<typeof setTimeout>;
  clearTimeout: (handle: ReturnType<typeof setTimeout>) => void;
};

export class RenderScheduler<T, R> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: T | null = null;
  private inFlight = false;
  private nextId = 0;
  private newestIssued = -1;
  requestsIssued = 0;

  constructor(
    private readonly issue: (payload: T) => Promise<R>,
    private readonly deliver: (result: R, payload: T) => void,
    private readonly onError: (err: unknown) => void = () => undefined,
    private readonly windowMs: number = DEBOUNCE_MS,
    private readonly clock: Clock = globalThis,
  ) {}

  /** Ask for a render; bursts inside the window coalesce to the last payload. */
  request(payload: T): void {
    this.pending = payload;
    if (this.timer !== null) {
      this.clock.clearTimeout(this.timer);
    }
    this.timer = this.clock.setTimeout(() => {
      this.timer = null;
      this.fire();
    }, this.windowMs);
  }

  /** Bypass the window (initial load, explicit button). Still latest-wins. */
  requestNow(payload: T): void {
    this.pending = payload;
    if (this.timer !== null) {
      this.clock.clearTimeout(this.timer);
      this.timer = null;
    }
    this.fire();
  }

  private fire(): void {
    if (this.inFlight || this.pending === null) {
      return; // the in-flight completion re-fires for whatever is pending
    }
    const payload = this.pending;
    this.pending = null;
    const id = this.nextId++;
    this.newestIssued = id;
    this.inFlight = true;
    this.requestsIssued += 1;
    this.issue(payload)
      .then((result) => {
        if (id === this.newestIssued) {
          this.deliver(result, payload); // stale responses are discarded
        }
      })
      .catch((err) => {
        if (id === this.newestIssued) {
          this.onError(err);
        }
      })
      .finally(() => {
        this.inFlight = false;
        if (this.pending !== null) {
          this.fire();
        }
      });
  }
}
