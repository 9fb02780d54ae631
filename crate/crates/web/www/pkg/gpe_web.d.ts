/* tslint:disable */
/* eslint-disable */

/**
 * An EARCG run advanced a few iterations per animation frame.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * RGBA pixels of `|phi|²`, `n` by `n`, top row = largest x2.
     */
    density_rgba(): Uint8Array;
    done(): boolean;
    energy(): number;
    gnorm(): number;
    /**
     * Indicator of the current iterate scaled by `factor`, the way a
     * predictor with a norm error would return it.
     */
    indicator(factor: number): number;
    iterations(): number;
    n(): number;
    constructor(n: number, omega: number, kappa: number, seed: bigint);
    reset(seed: bigint): void;
    /**
     * Runs up to `count` iterations; returns true once finished.
     */
    step(count: number): boolean;
}

/**
 * Acceptance threshold of the indicator.
 */
export function indicator_threshold(): number;

/**
 * Geometric tolerance schedule from `eps_max` down to `eps_min`.
 */
export function tolerance_schedule(eps_min: number, eps_max: number, m: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_density_rgba: (a: number) => [number, number];
    readonly demo_done: (a: number) => number;
    readonly demo_energy: (a: number) => number;
    readonly demo_gnorm: (a: number) => number;
    readonly demo_indicator: (a: number, b: number) => number;
    readonly demo_iterations: (a: number) => number;
    readonly demo_n: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly demo_reset: (a: number, b: bigint) => [number, number];
    readonly demo_step: (a: number, b: number) => [number, number, number];
    readonly indicator_threshold: () => number;
    readonly tolerance_schedule: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
