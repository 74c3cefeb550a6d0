/* tslint:disable */
/* eslint-disable */

/**
 * A small recurrent autoencoder trained incrementally on random sinusoids.
 */
export class SineDemo {
    free(): void;
    [Symbol.dispose](): void;
    epochs(): number;
    /**
     * Hides `rate` of the cells and fills them back. Returns three rows of
     * length T: observed values (NaN where hidden), LOCF, autoencoder.
     */
    impute(a: number, b: number, rate: number, seed: number): Float64Array;
    constructor(seed: number, n_train: number, length: number);
    reconstruct(a: number, b: number): Float64Array;
    series(a: number, b: number): Float64Array;
    /**
     * Runs `n` more epochs and returns their mean losses.
     */
    train_epochs(n: number, learning_rate: number): Float64Array;
}

/**
 * Kernel of a small labelled toy set with injected missing values,
 * row-major `n × n` with samples grouped by class.
 */
export function class_kernel(seed: number, n_classes: number, per_class: number, missing_rate: number, q: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sinedemo_free: (a: number, b: number) => void;
    readonly class_kernel: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly sinedemo_epochs: (a: number) => number;
    readonly sinedemo_impute: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly sinedemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly sinedemo_reconstruct: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sinedemo_series: (a: number, b: number, c: number) => [number, number];
    readonly sinedemo_train_epochs: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
