/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sinedemo_free: (a: number, b: number) => void;
export const class_kernel: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const sinedemo_epochs: (a: number) => number;
export const sinedemo_impute: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const sinedemo_new: (a: number, b: number, c: number) => [number, number, number];
export const sinedemo_reconstruct: (a: number, b: number, c: number) => [number, number, number, number];
export const sinedemo_series: (a: number, b: number, c: number) => [number, number];
export const sinedemo_train_epochs: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
